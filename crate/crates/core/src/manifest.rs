use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dsd::TrainConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl FileDigest {
    pub fn of(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut hasher = Sha256::new();
        let mut buf = vec![0u8; 1 << 16];
        let mut bytes = 0u64;
        loop {
            let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
            if n == 0 {
                break;
            }
            hasher.update(&buf[..n]);
            bytes += n as u64;
        }
        Ok(Self {
            path: path.display().to_string(),
            sha256: hex::encode(hasher.finalize()),
            bytes,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub train_seconds: f64,
    pub total_seconds: f64,
}

/// Record of one artifact-producing run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: Vec<String>,
    pub method: String,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub seed: u64,
    pub threads: usize,
    pub inputs_normalized: bool,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub epoch_losses: Vec<f64>,
    pub timings: Timings,
}

/// SHA-256 of the compact JSON form. Object keys are sorted, so equal
/// configs hash equally.
pub fn config_hash(config: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(config.to_string().as_bytes()))
}

impl RunManifest {
    pub fn for_training(method: &str, cfg: &TrainConfig, epoch_losses: Vec<f64>, train_seconds: f64) -> Self {
        let config = serde_json::to_value(cfg).expect("config serializes");
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: Vec::new(),
            method: method.to_string(),
            config_hash: config_hash(&config),
            config,
            seed: cfg.seed,
            threads: crate::parallel::thread_count(),
            inputs_normalized: true,
            inputs: Vec::new(),
            outputs: Vec::new(),
            epoch_losses,
            timings: Timings {
                train_seconds,
                total_seconds: train_seconds,
            },
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}
