//! Checkpoint container.
//!
//! ```text
//! magic        8 bytes   "NETHIRA\0"
//! version      u32 LE
//! header_len   u32 LE
//! header       header_len bytes of compact JSON:
//!              {"config":{…},"dtype":"f32","step":N,"rng_state":N,
//!               "tensors":[{"name":…,"shape":[…]}, …]}
//! payload      every tensor in header order, row-major, little-endian
//! digest       32-byte SHA-256 of everything above
//! ```
//!
//! Serialization is canonical, so load followed by save reproduces the file
//! byte for byte.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{ModelConfig, ModelError, Nethira, Real};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"NETHIRA\0";
pub const CHECKPOINT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    CorruptFile(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Parameters plus the training position they were saved at.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint<F> {
    pub model: Nethira<F>,
    pub step: u64,
    /// Seed from which training resumes drawing randomness.
    pub rng_state: u64,
}

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    dtype: String,
    step: u64,
    rng_state: u64,
    tensors: Vec<TensorMeta>,
}

impl<F: Real> ModelCheckpoint<F> {
    pub fn new(model: Nethira<F>, step: u64, rng_state: u64) -> Self {
        Self { model, step, rng_state }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let params = self.model.weights.params();
        let header = Header {
            config: self.model.config().clone(),
            dtype: F::DTYPE.to_string(),
            step: self.step,
            rng_state: self.rng_state,
            tensors: params
                .iter()
                .map(|(name, shape, _)| TensorMeta {
                    name: name.clone(),
                    shape: shape.clone(),
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, _, data) in &params {
            for &v in *data {
                v.put_le(&mut out);
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let corrupt = |m: &str| CheckpointError::CorruptFile(m.to_string());
        if bytes.len() < 16 + DIGEST_LEN {
            return Err(corrupt("file too short"));
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::VersionMismatch {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("digest mismatch"));
        }
        let header_len = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
        let header_end = 16usize
            .checked_add(header_len)
            .filter(|&e| e <= body.len())
            .ok_or_else(|| corrupt("header overruns file"))?;
        let header: Header =
            serde_json::from_slice(&body[16..header_end]).map_err(|e| corrupt(&format!("header: {e}")))?;
        if header.dtype != F::DTYPE {
            return Err(corrupt(&format!("dtype {} cannot load as {}", header.dtype, F::DTYPE)));
        }
        let mut model = Nethira::<F>::new(header.config.clone(), 0)?;
        {
            let expected = model.weights.params();
            if expected.len() != header.tensors.len()
                || expected
                    .iter()
                    .zip(&header.tensors)
                    .any(|((n, s, _), m)| *n != m.name || *s != m.shape)
            {
                return Err(corrupt("tensor table does not match config"));
            }
        }
        let mut payload = &body[header_end..];
        for tensor in model.weights.params_mut() {
            let need = tensor.len() * F::WIDTH;
            if payload.len() < need {
                return Err(corrupt("payload truncated"));
            }
            for (v, chunk) in tensor.iter_mut().zip(payload[..need].chunks_exact(F::WIDTH)) {
                *v = F::get_le(chunk);
            }
            payload = &payload[need..];
        }
        if !payload.is_empty() {
            return Err(corrupt("trailing payload bytes"));
        }
        Ok(Self {
            model,
            step: header.step,
            rng_state: header.rng_state,
        })
    }
}

pub fn save_checkpoint<F: Real>(ckpt: &ModelCheckpoint<F>, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    fs::write(path, ckpt.to_bytes()).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint<F: Real>(path: impl AsRef<Path>) -> Result<ModelCheckpoint<F>, CheckpointError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    ModelCheckpoint::from_bytes(&bytes)
}
