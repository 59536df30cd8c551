//! Run manifests: every output directory records the config hash, seed,
//! crate version, command parameters, and result counts of the run that
//! produced it.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    /// Command-specific parameters worth auditing (thresholds, backends).
    pub params: serde_json::Value,
    pub counts: BTreeMap<String, u64>,
}

impl RunManifest {
    pub fn new(command: &str, config_hash: &str, seed: u64) -> Self {
        RunManifest {
            command: command.to_string(),
            config_hash: config_hash.to_string(),
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            params: serde_json::Value::Null,
            counts: BTreeMap::new(),
        }
    }

    pub fn with_params(mut self, params: serde_json::Value) -> Self {
        self.params = params;
        self
    }

    pub fn count(mut self, key: &str, value: u64) -> Self {
        self.counts.insert(key.to_string(), value);
        self
    }

    pub fn write(&self, out_dir: &Path) -> anyhow::Result<()> {
        std::fs::create_dir_all(out_dir)?;
        let path = out_dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}
