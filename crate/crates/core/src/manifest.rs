//! Per-run provenance records: what was run, on which inputs, producing what.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::CHECKPOINT_VERSION;

pub const MANIFEST_VERSION: u32 = 1;

/// Hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub path: String,
    /// Absent for outputs that carry wall-clock measurements.
    pub sha256: Option<String>,
}

/// One manifest per run. Holds no timestamps, so reruns with the same
/// config, seeds and inputs reproduce it byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub version: u32,
    pub command: String,
    pub config_sha256: String,
    /// The config itself when it is JSON, else null.
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    /// Input path to content digest.
    pub inputs: BTreeMap<String, String>,
    pub artifact_versions: BTreeMap<String, String>,
    pub outputs: Vec<OutputRecord>,
}

impl RunManifest {
    /// `config` is the canonical serialized config of the run.
    pub fn new(command: &str, config: &[u8]) -> Self {
        let artifact_versions = BTreeMap::from([
            ("checkpoint".to_string(), CHECKPOINT_VERSION.to_string()),
            ("dualte".to_string(), env!("CARGO_PKG_VERSION").to_string()),
            ("manifest".to_string(), MANIFEST_VERSION.to_string()),
        ]);
        Self {
            version: MANIFEST_VERSION,
            command: command.to_string(),
            config_sha256: sha256_hex(config),
            config: serde_json::from_slice(config).unwrap_or(serde_json::Value::Null),
            seeds: BTreeMap::new(),
            inputs: BTreeMap::new(),
            artifact_versions,
            outputs: Vec::new(),
        }
    }

    pub fn seed(&mut self, name: &str, seed: u64) -> &mut Self {
        self.seeds.insert(name.to_string(), seed);
        self
    }

    pub fn input(&mut self, path: &str, contents: &[u8]) -> &mut Self {
        self.inputs.insert(path.to_string(), sha256_hex(contents));
        self
    }

    /// Records an output; `contents` is `None` for non-reproducible files.
    pub fn output(&mut self, path: &str, contents: Option<&[u8]>) -> &mut Self {
        self.outputs.push(OutputRecord {
            path: path.to_string(),
            sha256: contents.map(sha256_hex),
        });
        self
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    /// Digest of the serialized manifest.
    pub fn digest(&self) -> String {
        sha256_hex(self.to_json().as_bytes())
    }
}
