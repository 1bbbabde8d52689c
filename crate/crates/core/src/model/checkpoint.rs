//! Binary checkpoint: `TPMP` magic, `u32` format version, `u64` header
//! length, a JSON header (config, normalizer, tensor names and shapes), the
//! tensors as little-endian `f32`, then a CRC-32 of everything before it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Model, ModelConfig, ModelError};
use crate::dataset::Normalizer;
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"TPMP";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported checkpoint format: {found}")]
    Version { found: String },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A trained model together with the feature scaling it was trained with.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub normalizer: Normalizer,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    normalizer: Normalizer,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            config: self.model.config().clone(),
            normalizer: self.normalizer.clone(),
            tensors: self
                .model
                .layout()
                .specs()
                .iter()
                .zip(self.model.params())
                .map(|(s, t)| TensorEntry {
                    name: s.name.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + json.len() + 4 * self.model.param_count() + 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.model.params() {
            for &x in t.data() {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            let found = bytes.get(..4).map(|m| String::from_utf8_lossy(m).into_owned());
            return Err(CheckpointError::Version {
                found: format!("magic {:?}", found.unwrap_or_default()),
            });
        }
        if bytes.len() < 20 {
            return Err(CheckpointError::Corrupt(format!("{} bytes is too short", bytes.len())));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version {
                found: format!("version {version}, expected {CHECKPOINT_VERSION}"),
            });
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(CheckpointError::Checksum { stored, computed });
        }
        let hlen = u64::from_le_bytes(body[8..16].try_into().expect("8 bytes")) as usize;
        let json = body
            .get(16..16usize.saturating_add(hlen))
            .ok_or_else(|| CheckpointError::Corrupt("header runs past end of file".into()))?;
        let header: Header =
            serde_json::from_slice(json).map_err(|e| CheckpointError::Corrupt(format!("header: {e}")))?;
        let mut data = &body[16 + hlen..];
        let mut params = Vec::with_capacity(header.tensors.len());
        for entry in &header.tensors {
            let n: usize = entry.shape.iter().product();
            if data.len() < 4 * n {
                return Err(CheckpointError::Corrupt(format!("tensor {} is truncated", entry.name)));
            }
            let values = data[..4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect();
            data = &data[4 * n..];
            params.push(
                Tensor::new(entry.shape.clone(), values)
                    .map_err(|e| CheckpointError::Corrupt(e.to_string()))?,
            );
        }
        if !data.is_empty() {
            return Err(CheckpointError::Corrupt(format!("{} trailing bytes", data.len())));
        }
        let model = Model::from_parts(header.config, params)?;
        let names_match = model
            .layout()
            .specs()
            .iter()
            .zip(&header.tensors)
            .all(|(s, e)| s.name == e.name);
        if !names_match {
            return Err(CheckpointError::Corrupt("tensor names do not match the layout".into()));
        }
        if header.normalizer.dim() != model.config().numeric_dim() {
            return Err(CheckpointError::Corrupt("normalizer width does not match the config".into()));
        }
        Ok(Checkpoint {
            model,
            normalizer: header.normalizer,
        })
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<(), CheckpointError> {
    std::fs::write(path, checkpoint.to_bytes()).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Checkpoint::from_bytes(&bytes)
}
