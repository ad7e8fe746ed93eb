//! Run manifests: what produced an output file.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<InputDigest>,
    /// Left empty inside output files so reruns stay byte-identical, unless
    /// `SOURCE_DATE_EPOCH` pins it.
    #[serde(default)]
    pub timestamp: Option<String>,
}

fn pinned_epoch() -> Option<u64> {
    std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.trim().parse().ok())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn digest_file(path: impl AsRef<Path>) -> Result<InputDigest> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(InputDigest {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

impl RunManifest {
    pub fn new(subcommand: &str, config: serde_json::Value) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            subcommand: subcommand.to_string(),
            config,
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            timestamp: None,
        }
    }

    pub fn with_seed(mut self, name: &str, seed: u64) -> Self {
        self.seeds.insert(name.to_string(), seed);
        self
    }

    pub fn with_input(mut self, digest: InputDigest) -> Self {
        self.inputs.push(digest);
        self
    }

    /// SHA-256 of the canonical JSON with the timestamp removed.
    pub fn hash(&self) -> String {
        let unstamped = RunManifest {
            timestamp: None,
            ..self.clone()
        };
        sha256_hex(serde_json::to_string(&unstamped).expect("manifest serializes").as_bytes())
    }

    /// Stamped with `SOURCE_DATE_EPOCH` when set, else with the wall clock.
    pub fn stamped(&self) -> Self {
        let secs = pinned_epoch().unwrap_or_else(|| {
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        });
        RunManifest {
            timestamp: Some(format!("unix:{secs}")),
            ..self.clone()
        }
    }

    /// The copy embedded in output files: stamped only from `SOURCE_DATE_EPOCH`.
    pub fn for_output(&self) -> Self {
        RunManifest {
            timestamp: pinned_epoch().map(|s| format!("unix:{s}")),
            ..self.clone()
        }
    }
}
