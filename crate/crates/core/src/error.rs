use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: I/O error")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}:{column}: parse error: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("dialogue {dialogue}: unknown intent {intent:?}")]
    UnknownIntent { dialogue: usize, intent: String },

    #[error("lookup error: token {0:?} is not in the vocabulary")]
    Lookup(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("non-finite loss at epoch {epoch}{}: {detail}", batch.map(|b| format!(", batch {b}")).unwrap_or_default())]
    NonFinite {
        epoch: usize,
        batch: Option<usize>,
        detail: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
