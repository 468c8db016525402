//! `manifest.json`: config hash, seed, versions and output digests. Holds
//! no timestamps or host details, so identical runs give identical bytes.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub tool_version: String,
    pub core_version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> CliResult<String> {
    std::fs::read(path).map(|b| sha256_hex(&b)).map_err(|e| CliError::io(path, e))
}

impl Manifest {
    pub fn new(command: &str, config_bytes: &[u8], seed: u64) -> Self {
        Self {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            core_version: cnr::VERSION.to_string(),
            config_sha256: sha256_hex(config_bytes),
            seed,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    /// Inputs are keyed by file name only, so moving a dataset does not
    /// change the manifest.
    pub fn add_input(&mut self, path: &Path) -> CliResult<()> {
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        self.inputs.insert(name, file_sha256(path)?);
        Ok(())
    }

    pub fn add_outputs(&mut self, dir: &Path, names: &[String]) -> CliResult<()> {
        for n in names {
            self.outputs.insert(n.clone(), file_sha256(&dir.join(n))?);
        }
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::schema(e.to_string()))?;
        std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))
    }
}
