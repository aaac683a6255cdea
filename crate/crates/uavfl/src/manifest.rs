//! `manifest.json`: what produced an output directory and how to rerun it.

use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Result;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::output::OutDir;

pub const MANIFEST: &str = "manifest.json";
/// Copy of the resolved configuration next to the manifest.
pub const CONFIG_COPY: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub seed: u64,
    pub layout_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub argv: Vec<String>,
    pub config_path: String,
    /// SHA-256 of `config.toml`.
    pub config_sha256: String,
    pub out_dir: String,
    pub seeds: Seeds,
    pub timestamp_unix: u64,
}

pub fn config_digest(resolved_toml: &str) -> String {
    let digest = Sha256::digest(resolved_toml.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    pub fn new(subcommand: &str, argv: &[String], config_path: &str, config: &Config, out: &OutDir) -> Result<Self> {
        let resolved = config.resolved_toml()?;
        Ok(Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            subcommand: subcommand.to_string(),
            argv: argv.to_vec(),
            config_path: config_path.to_string(),
            config_sha256: config_digest(&resolved),
            out_dir: out.path().display().to_string(),
            seeds: Seeds {
                seed: config.seed,
                layout_seed: config.devices.layout_seed,
            },
            timestamp_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        })
    }

    /// Writes the manifest and the resolved configuration it hashes.
    pub fn write(&self, config: &Config, out: &OutDir) -> Result<()> {
        out.write_text(CONFIG_COPY, &config.resolved_toml()?)?;
        out.write_text(MANIFEST, &(serde_json::to_string_pretty(self)? + "\n"))
    }
}
