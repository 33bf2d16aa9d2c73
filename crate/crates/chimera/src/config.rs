//! Run configuration: desk defaults, overlaid by an optional JSON file, then
//! by command-line flags.

use std::fs;
use std::path::Path;

use chimera_core::corpus::SyntheticConfig;
use chimera_core::model::ModelConfig;
use chimera_core::train::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{invalid, io_err, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    /// Seed of the parameter initialization.
    pub model_seed: u64,
    /// Training split generator; dev and test splits use derived seeds.
    pub data: SyntheticConfig,
    pub dev_samples: usize,
    pub test_samples: usize,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    /// Checkpoints averaged around the best dev loss after fine-tuning.
    pub average: usize,
    pub beam: usize,
    pub max_len: usize,
    pub length_penalty: f64,
    pub export_samples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::desk(),
            model_seed: 1,
            data: SyntheticConfig::default(),
            dev_samples: 32,
            test_samples: 32,
            pretrain: TrainConfig::desk_pretrain(),
            finetune: TrainConfig::desk_finetune(),
            average: 7,
            beam: 10,
            max_len: 32,
            length_penalty: 0.0,
            export_samples: 100,
        }
    }
}

/// Recursively overlays `patch` on `base`; keys unknown to `base` are errors.
fn overlay(base: &mut Value, patch: Value, at: &str) -> std::result::Result<(), String> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let key = if at.is_empty() { k.clone() } else { format!("{at}.{k}") };
                match b.get_mut(&k) {
                    Some(slot) => overlay(slot, v, &key)?,
                    None => return Err(format!("unknown config key {key}")),
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

impl RunConfig {
    /// Defaults overlaid with the JSON object in `path`; partial files are fine.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(path) = path {
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            let patch: Value = serde_json::from_str(&text).map_err(|e| invalid(path, format!("config: {e}")))?;
            let mut base = serde_json::to_value(&cfg).expect("config serializes");
            overlay(&mut base, patch, "").map_err(|m| invalid(path, m))?;
            cfg = serde_json::from_value(base).map_err(|e| invalid(path, format!("config: {e}")))?;
        }
        Ok(cfg)
    }

    /// One seed for data, initialization and both training stages.
    pub fn set_seed(&mut self, seed: u64) {
        self.model_seed = seed;
        self.data.seed = seed;
        self.pretrain.seed = seed;
        self.finetune.seed = seed;
    }

    pub fn validate(&self) -> chimera_core::Result<()> {
        self.model.validate()?;
        self.data.validate()?;
        self.pretrain.validate()?;
        self.finetune.validate()?;
        if self.data.vocab_size != self.model.vocab_size {
            return Err(chimera_core::Error::Config(format!(
                "data vocabulary {} differs from model vocabulary {}",
                self.data.vocab_size, self.model.vocab_size
            )));
        }
        if self.data.feature_dim != self.model.speech_dim {
            return Err(chimera_core::Error::Config(format!(
                "frame dim {} differs from model speech_dim {}",
                self.data.feature_dim, self.model.speech_dim
            )));
        }
        if self.beam == 0 || self.average == 0 {
            return Err(chimera_core::Error::Config("beam and average must be at least 1".into()));
        }
        Ok(())
    }
}
