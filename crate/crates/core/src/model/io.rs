//! Model file format.
//!
//! ```text
//! "ITCTM1" | u32 version | u32 manifest length | JSON manifest
//! | u64 parameter count | f32 × parameter count | SHA-256 of all preceding bytes
//! ```
//!
//! The manifest holds the model configuration, the vocabulary and
//! normalisation statistics the inputs were encoded with, the selected
//! features, and the name and shape of every parameter tensor in file order.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ItctModel, ModelConfig};
use crate::dataset::{FeatureSet, NormalizationStats, Vocabulary};
use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"ITCTM1";
pub const MODEL_FORMAT_VERSION: u32 = 1;
const WHAT: &str = "model file";
const DIGEST_LEN: usize = 32;

/// A trained network together with everything needed to encode its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub model: ItctModel<f32>,
    pub vocabulary: Vocabulary,
    pub normalization: NormalizationStats,
    pub features: FeatureSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ModelConfig,
    pub vocabulary: Vocabulary,
    pub normalization: NormalizationStats,
    pub features: FeatureSet,
    pub tensors: Vec<TensorEntry>,
}

impl ModelBundle {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let params = self.model.params();
        let manifest = Manifest {
            config: self.model.config.clone(),
            vocabulary: self.vocabulary.clone(),
            normalization: self.normalization.clone(),
            features: self.features.clone(),
            tensors: params
                .iter()
                .map(|(name, p)| TensorEntry {
                    name: name.clone(),
                    rows: p.value.rows(),
                    cols: p.value.cols(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&manifest).map_err(|e| Error::json("model manifest", e))?;
        let n_params: usize = params.iter().map(|(_, p)| p.len()).sum();

        let mut buf = Vec::with_capacity(MAGIC.len() + 16 + json.len() + 4 * n_params + DIGEST_LEN);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
        let json_len = u32::try_from(json.len()).map_err(|_| Error::Format("model manifest too large".into()))?;
        buf.extend_from_slice(&json_len.to_le_bytes());
        buf.extend_from_slice(&json);
        buf.extend_from_slice(&(n_params as u64).to_le_bytes());
        for (_, p) in &params {
            for v in p.value.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        Ok(buf)
    }

    /// Parses a model file. Checks run in order: magic, version, length,
    /// checksum, then manifest consistency.
    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < MAGIC.len() || &buf[..MAGIC.len()] != MAGIC {
            return Err(Error::BadMagic { what: WHAT });
        }
        let truncated = || Error::Truncated { what: WHAT };
        let read_u32 = |at: usize| -> Result<u32> {
            let b = buf.get(at..at + 4).ok_or_else(truncated)?;
            Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
        };
        let version = read_u32(MAGIC.len())?;
        if version != MODEL_FORMAT_VERSION {
            return Err(Error::Version {
                what: WHAT,
                found: version,
                supported: MODEL_FORMAT_VERSION,
            });
        }
        let json_len = read_u32(MAGIC.len() + 4)? as usize;
        let json_start = MAGIC.len() + 8;
        let count_at = json_start + json_len;
        let count = buf.get(count_at..count_at + 8).ok_or_else(truncated)?;
        let n_params = u64::from_le_bytes(count.try_into().expect("8 bytes")) as usize;
        let params_start = count_at + 8;
        let params_end = n_params
            .checked_mul(4)
            .and_then(|b| b.checked_add(params_start))
            .ok_or_else(truncated)?;
        let expected = params_end.checked_add(DIGEST_LEN).ok_or_else(truncated)?;
        if buf.len() < expected {
            return Err(truncated());
        }
        if buf.len() > expected {
            return Err(Error::Format(format!(
                "{} trailing bytes in model file",
                buf.len() - expected
            )));
        }
        if Sha256::digest(&buf[..params_end]).as_slice() != &buf[params_end..] {
            return Err(Error::Checksum { what: WHAT });
        }

        let manifest: Manifest =
            serde_json::from_slice(&buf[json_start..count_at]).map_err(|e| Error::json("model manifest", e))?;
        let mut model = ItctModel::<f32>::init(manifest.config.clone(), 0)?;
        let mut values = buf[params_start..params_end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")));
        {
            let mut params = model.params_mut();
            if params.len() != manifest.tensors.len() {
                return Err(Error::Format(format!(
                    "manifest lists {} tensors, configuration implies {}",
                    manifest.tensors.len(),
                    params.len()
                )));
            }
            for ((name, p), entry) in params.iter_mut().zip(&manifest.tensors) {
                if *name != entry.name || p.value.shape() != (entry.rows, entry.cols) {
                    return Err(Error::Format(format!(
                        "tensor {} {}×{} does not match expected {name} {:?}",
                        entry.name,
                        entry.rows,
                        entry.cols,
                        p.value.shape()
                    )));
                }
                for v in p.value.data_mut() {
                    *v = values.next().ok_or_else(truncated)?;
                }
            }
        }
        if values.next().is_some() {
            return Err(Error::Format("parameter section longer than the manifest".into()));
        }
        Ok(Self {
            model,
            vocabulary: manifest.vocabulary,
            normalization: manifest.normalization,
            features: manifest.features,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }
}
