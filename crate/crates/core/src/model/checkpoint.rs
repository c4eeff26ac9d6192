//! Checkpoint file format (version 1), little-endian throughout:
//!
//! ```text
//! offset  size  field
//! 0       8     magic "CGPOCKPT"
//! 8       4     u32 format version
//! 12      8     u64 header length H
//! 20      H     UTF-8 JSON header {model_config, tokenizer_fingerprint,
//!               provenance, dtype, n_weights, tensors}
//! 20+H    4·N   N f32 weights in layout order
//! end-32  32    SHA-256 of every preceding byte
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ModelConfig, ParamLayout, TensorInfo};
use super::sampling::Policy;
use super::scalar::Scalar;
use super::transformer::{init_weights, Transformer};
use crate::corpus::Tokenizer;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"CGPOCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub weights: Vec<f32>,
    pub model_config: ModelConfig,
    pub tokenizer_fingerprint: String,
    pub provenance: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model_config: ModelConfig,
    tokenizer_fingerprint: String,
    provenance: BTreeMap<String, String>,
    dtype: String,
    n_weights: usize,
    tensors: Vec<TensorInfo>,
}

impl Checkpoint {
    pub fn init(model_config: &ModelConfig, tokenizer: &Tokenizer) -> Result<Self> {
        if model_config.vocab_size != tokenizer.vocab_size() {
            return Err(Error::InvalidConfig(format!(
                "model vocab_size {} does not match tokenizer ({})",
                model_config.vocab_size,
                tokenizer.vocab_size()
            )));
        }
        Ok(Self {
            weights: init_weights(model_config)?,
            model_config: model_config.clone(),
            tokenizer_fingerprint: tokenizer.fingerprint(),
            provenance: BTreeMap::from([("stage".to_string(), "init".to_string())]),
        })
    }

    pub fn from_model<T: Scalar>(
        model: &Transformer<T>,
        tokenizer_fingerprint: &str,
        provenance: BTreeMap<String, String>,
    ) -> Self {
        Self {
            weights: model.to_f32_weights(),
            model_config: model.config().clone(),
            tokenizer_fingerprint: tokenizer_fingerprint.to_string(),
            provenance,
        }
    }

    pub fn model<T: Scalar>(&self) -> Result<Transformer<T>> {
        Transformer::from_weights(&self.model_config, &self.weights)
    }

    pub fn policy<T: Scalar>(&self) -> Result<Policy<T>> {
        Ok(Policy {
            model: self.model()?,
            id: self.model_id(),
        })
    }

    /// Content hash of config and weights, truncated to 16 hex digits.
    pub fn model_id(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.model_config).expect("config serializes"));
        for w in &self.weights {
            h.update(w.to_le_bytes());
        }
        hex::encode(h.finalize())[..16].to_string()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            model_config: self.model_config.clone(),
            tokenizer_fingerprint: self.tokenizer_fingerprint.clone(),
            provenance: self.provenance.clone(),
            dtype: "f32".into(),
            n_weights: self.weights.len(),
            tensors: ParamLayout::new(&self.model_config).tensors,
        };
        let header = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + header.len() + 4 * self.weights.len() + 32);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for w in &self.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    /// Parses a checkpoint and verifies it against `expected_fingerprint`.
    pub fn from_bytes(bytes: &[u8], expected_fingerprint: &str) -> Result<Self> {
        let corrupt = |m: &str| Error::CorruptCheckpoint(m.to_string());
        if bytes.len() < 20 + 32 {
            return Err(corrupt("file too short"));
        }
        if &bytes[..8] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::CorruptCheckpoint(format!("unsupported format version {version}")));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("checksum mismatch (truncated or damaged file)"));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let header_end = 20usize.checked_add(hlen).ok_or_else(|| corrupt("bad header length"))?;
        if header_end > body.len() {
            return Err(corrupt("header extends past end of file"));
        }
        let header: Header = serde_json::from_slice(&body[20..header_end])
            .map_err(|e| Error::CorruptCheckpoint(format!("header: {e}")))?;
        if header.dtype != "f32" {
            return Err(Error::CorruptCheckpoint(format!("unsupported dtype {}", header.dtype)));
        }
        let payload = &body[header_end..];
        if payload.len() != 4 * header.n_weights {
            return Err(corrupt("weight payload length disagrees with header"));
        }
        if ParamLayout::new(&header.model_config).total != header.n_weights {
            return Err(corrupt("weight count disagrees with model_config"));
        }
        if header.tokenizer_fingerprint != expected_fingerprint {
            return Err(Error::FingerprintMismatch {
                expected: expected_fingerprint.to_string(),
                found: header.tokenizer_fingerprint,
            });
        }
        let weights = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            weights,
            model_config: header.model_config,
            tokenizer_fingerprint: header.tokenizer_fingerprint,
            provenance: header.provenance,
        })
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, checkpoint.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path, tokenizer: &Tokenizer) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes, &tokenizer.fingerprint())
}
