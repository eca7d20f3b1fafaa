use std::path::Path;

use hta_core::Result;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub argv: Vec<String>,
    pub seed: u64,
    /// SHA-256 of the effective configuration text.
    pub config_hash: String,
    pub config: String,
}

impl Manifest {
    pub fn new(command: &str, argv: &[String], seed: u64, config: String) -> Self {
        let digest = Sha256::digest(config.as_bytes());
        Manifest {
            tool: "hta",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            argv: argv.iter().skip(1).cloned().collect(),
            seed,
            config_hash: digest.iter().map(|b| format!("{b:02x}")).collect(),
            config,
        }
    }

    /// Writes to `path` if given, otherwise logs the manifest.
    pub fn emit(&self, path: Option<&Path>) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        match path {
            Some(p) => std::fs::write(p, json + "\n")?,
            None => log::info!("manifest: {}", serde_json::to_string(self)?),
        }
        Ok(())
    }
}
