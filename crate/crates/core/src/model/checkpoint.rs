use std::collections::BTreeMap;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Layer, Mlp, Model, ModelConfig, Operator};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Provenance of a set of weights. The topology descriptor is informational;
/// checkpoints load onto any topology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainingMeta {
    pub seed: u64,
    pub steps: usize,
    pub source_topology: String,
    /// Step whose weights were kept (early stopping restores the best one).
    #[serde(default)]
    pub best_step: usize,
    #[serde(default)]
    pub best_validation_loss: Option<f64>,
}

/// Serialized model: config plus little-endian `f64` weight blobs in base64,
/// with a SHA-256 over everything else to catch corruption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelCheckpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub weights: BTreeMap<String, String>,
    pub training_meta: TrainingMeta,
    pub checksum: String,
}

#[derive(Serialize)]
struct Body<'a> {
    version: u32,
    config: &'a ModelConfig,
    weights: &'a BTreeMap<String, String>,
    training_meta: &'a TrainingMeta,
}

fn encode(t: &Tensor) -> String {
    let bytes: Vec<u8> = t.data.iter().flat_map(|v| v.to_le_bytes()).collect();
    BASE64.encode(bytes)
}

fn decode(name: &str, blob: &str, rows: usize, cols: usize) -> Result<Tensor> {
    let bytes = BASE64
        .decode(blob)
        .map_err(|e| Error::Checkpoint(format!("weight {name}: {e}")))?;
    if bytes.len() != rows * cols * 8 {
        return Err(Error::Checkpoint(format!(
            "weight {name} has {} bytes, expected {} for {rows}x{cols}",
            bytes.len(),
            rows * cols * 8
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Tensor::new(rows, cols, data))
}

impl ModelCheckpoint {
    pub fn from_model(model: &Model, training_meta: TrainingMeta) -> Self {
        let weights = model
            .named_params()
            .into_iter()
            .map(|(name, t)| (name, encode(t)))
            .collect();
        let mut ckpt = Self {
            version: CHECKPOINT_VERSION,
            config: model.config().clone(),
            weights,
            training_meta,
            checksum: String::new(),
        };
        ckpt.checksum = ckpt.compute_checksum();
        ckpt
    }

    pub(super) fn compute_checksum(&self) -> String {
        let body = Body {
            version: self.version,
            config: &self.config,
            weights: &self.weights,
            training_meta: &self.training_meta,
        };
        let bytes = serde_json::to_vec(&body).expect("checkpoint body serializes");
        hex::encode(Sha256::digest(bytes))
    }

    /// Checks version and checksum.
    pub fn verify(&self) -> Result<()> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        let want = self.compute_checksum();
        if self.checksum != want {
            return Err(Error::Checkpoint(format!(
                "checksum mismatch: stored {}, computed {want}",
                self.checksum
            )));
        }
        Ok(())
    }

    pub fn to_model(&self) -> Result<Model> {
        self.verify()?;
        let config = &self.config;
        config.validate()?;
        let mut used = 0;
        let mut build = |prefix: &str, widths: &[usize]| -> Result<Mlp> {
            let layers = widths
                .windows(2)
                .enumerate()
                .map(|(i, w)| {
                    let mut get = |kind: &str, rows: usize, cols: usize| {
                        let name = format!("{prefix}.{i}.{kind}");
                        let blob = self
                            .weights
                            .get(&name)
                            .ok_or_else(|| Error::Checkpoint(format!("missing weight {name}")))?;
                        used += 1;
                        decode(&name, blob, rows, cols)
                    };
                    Ok(Layer {
                        weight: get("weight", w[0], w[1])?,
                        bias: get("bias", 1, w[1])?,
                    })
                })
                .collect::<Result<_>>()?;
            Ok(Mlp { layers })
        };
        let mlp1 = match config.operator {
            Operator::Edge => Some(build("mlp1", &config.mlp1_layers)?),
            Operator::Path => None,
        };
        let mlp2 = build("mlp2", &config.mlp2_layers)?;
        if used != self.weights.len() {
            return Err(Error::Checkpoint(format!(
                "{} weight entries present, config accounts for {used}",
                self.weights.len()
            )));
        }
        Model::from_parts(config.clone(), mlp1, mlp2)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Self = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        ckpt.verify()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
