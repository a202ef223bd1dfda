//! Orchestration for the `kgdl` command: configuration, the artifact
//! directory layout, one function per pipeline stage and the chat REPL.

pub mod artifacts;
pub mod chat;
pub mod config;
pub mod pipeline;

pub use artifacts::{Artifacts, EmbeddingKind, MissingArtifact, Split};
pub use config::{PipelineConfig, Variant};

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_MISSING_ARTIFACT: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

/// Process exit code for a failed command: 3 when an expected artifact is
/// absent, 4 on numeric failure, 2 for any other input problem.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<MissingArtifact>().is_some() {
            return EXIT_MISSING_ARTIFACT;
        }
        if let Some(e) = cause.downcast_ref::<kgdial::Error>() {
            if matches!(e, kgdial::Error::NonFinite { .. } | kgdial::Error::Numeric(_)) {
                return EXIT_NUMERIC;
            }
        }
    }
    EXIT_INPUT
}
