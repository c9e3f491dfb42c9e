//! Tool configuration: one TOML file with sections per pipeline stage.
//! Every field has a desk-scale default, so an empty file is a valid
//! configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::LossWeights;
use crate::manifest::config_fingerprint;
use crate::score::ScoreOptions;
use crate::synth::CorpusConfig;
use crate::train::{AblationMode, TrainConfig};

/// Dataset sizes produced by the `gen` command.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    /// Training tuples to render.
    pub tuple_count: usize,
    /// Training imitation pairs (degradation uniform in [0, 1]).
    pub pair_count: usize,
    /// Held-out labeled tuples for retrieval/reconstruction checks.
    pub eval_tuple_count: usize,
    /// Scoring cohort sizes.
    pub cohort_good: usize,
    pub cohort_poor: usize,
    pub corpus: CorpusConfig,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            tuple_count: 2000,
            pair_count: 500,
            eval_tuple_count: 25,
            cohort_good: 100,
            cohort_poor: 100,
            corpus: CorpusConfig::default(),
        }
    }
}

/// Training section: schedule and loss weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub checkpoint_interval: usize,
    pub base_lr: f64,
    pub lr_decay_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub augment: bool,
    pub ablation: AblationMode,
    pub loss: LossWeights,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            epochs: d.epochs,
            batch_size: d.batch_size,
            checkpoint_interval: d.checkpoint_interval,
            base_lr: d.base_lr,
            lr_decay_rate: d.lr_decay_rate,
            weight_decay: d.weight_decay,
            beta1: d.beta1,
            beta2: d.beta2,
            epsilon: d.epsilon,
            augment: d.augment,
            ablation: d.ablation,
            loss: d.weights,
        }
    }
}

impl TrainSection {
    /// Expands the section into a full training configuration.
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            rng_seed: seed,
            weights: self.loss.clone(),
            ablation: self.ablation,
            checkpoint_interval: self.checkpoint_interval,
            base_lr: self.base_lr,
            lr_decay_rate: self.lr_decay_rate,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            augment: self.augment,
            resume: None,
        }
    }
}

/// Evaluation section: cross-validation folds and segment masks.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub folds: usize,
    /// Mask names: `whole`, `upper_with_torso`, `upper_without_torso`,
    /// or a comma-free list of segment names joined by `+`.
    pub masks: Vec<String>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            folds: 2,
            masks: vec![
                "whole".to_string(),
                "upper_with_torso".to_string(),
                "upper_without_torso".to_string(),
            ],
        }
    }
}

/// The complete tool configuration.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ToolConfig {
    /// Root seed; every consumer derives its own stream from it.
    pub seed: Option<u64>,
    pub gen: GenConfig,
    pub train: TrainSection,
    pub score: ScoreOptions,
    pub eval: EvalSection,
}

impl ToolConfig {
    /// Parses a TOML config file; unknown keys are rejected.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let de = toml::de::Deserializer::new(text);
        serde_path_to_error_free(de)
    }

    /// Stable hash of the resolved configuration.
    pub fn fingerprint(&self) -> String {
        config_fingerprint(self)
    }

    /// Renders the configuration back to TOML (all fields explicit).
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

fn serde_path_to_error_free(de: toml::de::Deserializer<'_>) -> Result<ToolConfig> {
    ToolConfig::deserialize(de).map_err(|e| Error::config(format!("invalid config: {e}")))
}
