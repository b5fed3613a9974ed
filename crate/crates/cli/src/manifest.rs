use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Written next to every command's outputs. Holds no paths or timestamps, so
/// reruns with the same config and seed produce the same bytes.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: &'static str,
    pub version: &'static str,
    pub config: serde_json::Value,
    pub config_sha256: String,
    pub seeds: Vec<u64>,
    pub artifacts: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Manifest {
    pub fn new<C: Serialize>(
        command: &'static str,
        config: &C,
        seeds: Vec<u64>,
    ) -> Result<Self, CliError> {
        let config = serde_json::to_value(config)?;
        let config_sha256 = sha256_hex(serde_json::to_string(&config)?.as_bytes());
        Ok(Self {
            command,
            version: env!("CARGO_PKG_VERSION"),
            config,
            config_sha256,
            seeds,
            artifacts: BTreeMap::new(),
        })
    }

    /// Hashes the named files in `dir` and writes the manifest there.
    pub fn write(mut self, dir: &Path, files: &[String]) -> Result<(), CliError> {
        for f in files {
            let bytes = std::fs::read(dir.join(f))?;
            self.artifacts.insert(f.clone(), sha256_hex(&bytes));
        }
        std::fs::write(
            dir.join(MANIFEST_FILE),
            serde_json::to_string_pretty(&self)? + "\n",
        )?;
        Ok(())
    }
}
