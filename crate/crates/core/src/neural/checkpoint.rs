//! Binary checkpoint container.
//!
//! Layout: the magic bytes `KGDL1`, a little-endian `u64` manifest length,
//! the JSON manifest, then every tensor as row-major little-endian `f64`.
//! Manifest offsets are byte offsets from the start of the data block.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{ModelParams, Weights, TENSOR_NAMES};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"KGDL1";
const MAX_MANIFEST: u64 = 1 << 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub dim: usize,
    pub vocab_size: usize,
    pub n_intents: usize,
    pub tensors: Vec<TensorEntry>,
    /// Free-form metadata such as the training configuration.
    #[serde(default)]
    pub metadata: serde_json::Value,
}

pub fn write_checkpoint<W: Write>(params: &ModelParams, metadata: serde_json::Value, mut w: W) -> Result<()> {
    let mut offset = 0u64;
    let tensors = params
        .weights
        .named()
        .map(|(name, t)| {
            let e = TensorEntry {
                name: name.to_string(),
                shape: [t.rows, t.cols],
                offset,
            };
            offset += (t.data.len() * 8) as u64;
            e
        })
        .collect();
    let manifest = Manifest {
        format_version: 1,
        dim: params.dim,
        vocab_size: params.vocab_size,
        n_intents: params.n_intents,
        tensors,
        metadata,
    };
    let json = serde_json::to_vec(&manifest).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let io = |e| Error::Checkpoint(format!("write failed: {e}"));
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&json).map_err(io)?;
    for t in params.weights.tensors() {
        for v in &t.data {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(ModelParams, Manifest)> {
    let io = |e: std::io::Error| Error::Checkpoint(format!("truncated or unreadable: {e}"));
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic, not a checkpoint file".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(io)?;
    let len = u64::from_le_bytes(len);
    if len > MAX_MANIFEST {
        return Err(Error::Checkpoint(format!("manifest length {len} too large")));
    }
    let mut json = vec![0u8; len as usize];
    r.read_exact(&mut json).map_err(io)?;
    let manifest: Manifest = serde_json::from_slice(&json).map_err(|e| Error::Checkpoint(format!("manifest: {e}")))?;
    if manifest.format_version != 1 {
        return Err(Error::Checkpoint(format!("unsupported format version {}", manifest.format_version)));
    }

    let mut weights = Weights::zeros(manifest.vocab_size, manifest.dim, manifest.n_intents);
    if manifest.tensors.len() != TENSOR_NAMES.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, manifest lists {}",
            TENSOR_NAMES.len(),
            manifest.tensors.len()
        )));
    }
    let mut offset = 0u64;
    let mut buf = [0u8; 8];
    for ((entry, name), t) in manifest.tensors.iter().zip(TENSOR_NAMES).zip(weights.tensors_mut()) {
        if entry.name != name {
            return Err(Error::Checkpoint(format!("expected tensor {name}, found {}", entry.name)));
        }
        if entry.shape != [t.rows, t.cols] {
            return Err(Error::Checkpoint(format!(
                "tensor {name} has shape {:?}, expected {:?}",
                entry.shape,
                [t.rows, t.cols]
            )));
        }
        if entry.offset != offset {
            return Err(Error::Checkpoint(format!("tensor {name} offset {} is not contiguous", entry.offset)));
        }
        for v in t.data.iter_mut() {
            r.read_exact(&mut buf).map_err(io)?;
            *v = f64::from_le_bytes(buf);
        }
        offset += (t.data.len() * 8) as u64;
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra).map_err(io)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after tensor data".into()));
    }
    let params = ModelParams {
        dim: manifest.dim,
        vocab_size: manifest.vocab_size,
        n_intents: manifest.n_intents,
        weights,
    };
    params.validate()?;
    Ok((params, manifest))
}

pub fn save_checkpoint(path: &Path, params: &ModelParams, metadata: serde_json::Value) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(params, metadata, BufWriter::new(f))
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, Manifest)> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(f))
}
