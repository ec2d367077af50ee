use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::fsutil::{read_file, write_atomic};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&read_file(path)?))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactHash {
    /// Relative to the run's output directory.
    pub path: String,
    pub sha256: String,
}

/// Record of one command-line run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_sha256: String,
    pub seeds: BTreeMap<String, u64>,
    pub deterministic: bool,
    pub inputs: Vec<ArtifactHash>,
    pub artifacts: Vec<ArtifactHash>,
}

impl Manifest {
    pub fn new(command: &str, config_text: &str, deterministic: bool) -> Self {
        Manifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_sha256: sha256_hex(config_text.as_bytes()),
            seeds: BTreeMap::new(),
            deterministic,
            inputs: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.seeds.insert(name.into(), value);
    }

    fn hashed(root: &Path, path: &Path) -> Result<ArtifactHash> {
        let rel = path.strip_prefix(root).unwrap_or(path);
        Ok(ArtifactHash {
            path: rel.to_string_lossy().replace('\\', "/"),
            sha256: sha256_file(path)?,
        })
    }

    /// Hashes an input file; paths under `root` are recorded relative to it.
    pub fn input(&mut self, root: &Path, path: &Path) -> Result<()> {
        self.inputs.push(Self::hashed(root, path)?);
        Ok(())
    }

    pub fn artifact(&mut self, root: &Path, path: &Path) -> Result<()> {
        self.artifacts.push(Self::hashed(root, path)?);
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest fields are serializable")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = self.to_json();
        s.push('\n');
        write_atomic(path, s.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
    }
}
