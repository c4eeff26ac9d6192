//! Run-directory bookkeeping: config snapshot, per-stage manifests and
//! content-keyed stage caching.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub config_hash: String,
    /// Hash of the stage inputs: relevant config fields, flags and input files.
    pub cache_key: String,
    pub seed: u64,
    /// Output file name to its SHA-256.
    pub outputs: BTreeMap<String, String>,
}

pub fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

pub fn file_digest(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub struct Stage {
    pub name: String,
    pub dir: PathBuf,
    pub config: RunConfig,
    pub cache_key: String,
    pub seed: u64,
}

impl Stage {
    /// Creates the output directory and snapshots the config before anything
    /// else runs. `key_parts` are serialized into the cache key together with
    /// the digests of `inputs`.
    pub fn begin(
        name: &str,
        dir: &Path,
        config: &RunConfig,
        seed: u64,
        key_parts: &serde_json::Value,
        inputs: &[&Path],
    ) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let snapshot = dir.join("config.json");
        let text = serde_json::to_string_pretty(config).expect("config serializes") + "\n";
        std::fs::write(&snapshot, text).map_err(|e| io_err(&snapshot, e))?;
        let mut h = Sha256::new();
        h.update(name.as_bytes());
        h.update(serde_json::to_vec(key_parts).expect("key serializes"));
        for input in inputs {
            h.update(file_digest(input)?.as_bytes());
        }
        Ok(Self {
            name: name.to_string(),
            dir: dir.to_path_buf(),
            config: config.clone(),
            cache_key: hex::encode(h.finalize())[..16].to_string(),
            seed,
        })
    }

    fn manifest_path(&self) -> PathBuf {
        self.dir.join(format!("{}.manifest.json", self.name))
    }

    /// True when a previous run with the same key left intact outputs.
    pub fn cached(&self) -> bool {
        let Ok(text) = std::fs::read_to_string(self.manifest_path()) else {
            return false;
        };
        let Ok(m) = serde_json::from_str::<Manifest>(&text) else {
            return false;
        };
        m.cache_key == self.cache_key
            && m.outputs.iter().all(|(file, digest)| {
                file_digest(&self.dir.join(file)).is_ok_and(|d| &d == digest)
            })
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }

    pub fn finish(&self, outputs: &[&str]) -> Result<Manifest, CliError> {
        let mut digests = BTreeMap::new();
        for file in outputs {
            digests.insert(file.to_string(), file_digest(&self.path(file))?);
        }
        let manifest = Manifest {
            stage: self.name.clone(),
            config_hash: self.config.hash(),
            cache_key: self.cache_key.clone(),
            seed: self.seed,
            outputs: digests,
        };
        let path = self.manifest_path();
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        std::fs::write(&path, text).map_err(|e| io_err(&path, e))?;
        Ok(manifest)
    }
}
