//! Run manifests and dataset checksums.

use std::path::Path;

use dir_core::io::{GROUPS_FILE, LAPSES_FILE, RESPONSES_FILE};
use dir_core::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::Entries;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    /// Data directory read or written.
    pub data: String,
    pub dataset_sha256: String,
    pub config: Entries,
    /// Seeds of the individual chains, in output order.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub chain_seeds: Vec<u64>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, data: &Path, config: Entries) -> Result<Self> {
        Ok(RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            data: data.display().to_string(),
            dataset_sha256: dataset_checksum(data)?,
            config,
            chain_seeds: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        dir_core::io::write_text(&dir.join(MANIFEST_FILE), &json)
    }
}

/// SHA-256 over the dataset files, each prefixed by its name.
pub fn dataset_checksum(dir: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    for name in [RESPONSES_FILE, LAPSES_FILE, GROUPS_FILE] {
        let path = dir.join(name);
        match std::fs::read(&path) {
            Ok(bytes) => {
                hasher.update(name.as_bytes());
                hasher.update(b"\n");
                hasher.update((bytes.len() as u64).to_le_bytes());
                hasher.update(&bytes);
            }
            Err(e) if name == GROUPS_FILE && e.kind() == std::io::ErrorKind::NotFound => {}
            Err(source) => return Err(Error::Io { path: path.display().to_string(), source }),
        }
    }
    Ok(hex::encode(hasher.finalize()))
}
