//! Provenance record written next to every command's outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use vesselgraph::config::parse_kv;
use vesselgraph::trainer::TrainConfig;

pub const FILE_NAME: &str = "run_manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    pub manifest: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Resolved training settings, keyed as in config files.
    pub config: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, manifest: Option<&Path>, out_dir: &Path, config: Option<&TrainConfig>) -> Self {
        let config = config
            .map(|c| parse_kv(&c.to_kv()).expect("serialized config parses").into_iter().collect())
            .unwrap_or_default();
        Self {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            manifest: manifest.map(Path::to_path_buf),
            out_dir: out_dir.to_path_buf(),
            config,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(FILE_NAME);
        let json = serde_json::to_string_pretty(self)?;
        fs::write(&path, json + "\n").with_context(|| format!("writing {}", path.display()))
    }
}
