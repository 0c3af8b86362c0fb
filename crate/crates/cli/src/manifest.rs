use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Record of one command invocation, written before the stage runs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub revision: String,
    pub seed: Option<u64>,
    pub config: Option<String>,
    /// SHA-256 over the command's existing input files, in argument order.
    pub dataset_hash: String,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub started_unix: u64,
}

pub fn revision() -> String {
    format!("talkgrade {}", env!("CARGO_PKG_VERSION"))
}

pub fn hash_files(paths: &[PathBuf]) -> Result<String> {
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    for path in paths {
        let mut f = fs::File::open(path).with_context(|| format!("hashing {}", path.display()))?;
        loop {
            let n = f.read(&mut buf)?;
            if n == 0 {
                break;
            }
            hasher.update(&buf[..n]);
        }
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

impl RunManifest {
    pub fn new(command: &str, inputs: Vec<PathBuf>, outputs: Vec<PathBuf>) -> Result<Self> {
        Ok(Self {
            command: command.to_string(),
            revision: revision(),
            seed: None,
            config: None,
            dataset_hash: hash_files(&inputs.iter().filter(|p| p.exists()).cloned().collect::<Vec<_>>())?,
            inputs,
            outputs,
            started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        })
    }

    pub fn write(&self, dir: &Path, name: &str) -> Result<PathBuf> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(format!("{name}.json"));
        fs::write(&path, serde_json::to_string_pretty(self)?).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
