//! One `manifest.json` per output directory. It holds no timestamps or
//! absolute output paths, so identical runs write identical manifests.

use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: &'static str,
    pub seed: u64,
    /// Fully resolved settings after merging flags, config file and defaults.
    pub config: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_hash: Option<String>,
    /// Paths relative to the output directory.
    pub artifacts: Vec<String>,
    pub results: Value,
}

impl RunManifest {
    pub fn new(subcommand: &'static str, seed: u64, config: Value) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            subcommand,
            seed,
            config,
            checkpoint_hash: None,
            artifacts: Vec::new(),
            results: Value::Null,
        }
    }

    pub fn write(&self, out_dir: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::Runtime(e.to_string()))?;
        std::fs::write(out_dir.join(MANIFEST_FILE), text + "\n")?;
        Ok(())
    }
}
