use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Result;
use serde::Serialize;
use sha2::{Digest, Sha256};

use lpcft::config::KvConfig;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Provenance record written once per run directory.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<String>,
    pub seed: u64,
    /// SHA-256 of the effective configuration text.
    pub config_hash: String,
    pub out_dir: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub version: String,
    /// The effective configuration.
    pub config: String,
}

pub fn config_hash(cfg: &KvConfig) -> String {
    let digest = Sha256::digest(cfg.to_text().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl RunManifest {
    pub fn new(command: &str, config_path: Option<&Path>, cfg: &KvConfig, seed: u64, out: &Path, started: u64) -> Self {
        RunManifest {
            command: command.to_string(),
            config_path: config_path.map(|p| p.display().to_string()),
            seed,
            config_hash: config_hash(cfg),
            out_dir: out.display().to_string(),
            started_unix: started,
            finished_unix: now_unix(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: cfg.to_text(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_tracks_the_config() {
        let mut a = KvConfig::new();
        a.set("seed", 1);
        let mut b = KvConfig::new();
        b.set("seed", 1);
        assert_eq!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 64);
        b.set("seed", 2);
        assert_ne!(config_hash(&a), config_hash(&b));
    }
}
