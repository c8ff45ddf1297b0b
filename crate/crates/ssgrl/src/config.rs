//! JSON run configuration.
//!
//! ```json
//! {
//!   "profile": "toy",
//!   "model": { "variant": "full", "seed": 7 },
//!   "train": { "epochs": 200, "batch_size": 4, "lr": 0.001 },
//!   "data": { …synthetic spec… }
//! }
//! ```
//!
//! The profile pins every layer width and the step count; a config that
//! names one of them with a different value is rejected. Category count and
//! grid size come from the dataset unless given.

use std::path::Path;

use serde::{Deserialize, Serialize};

use ssgrl_core::model::{ModelConfig, Variant};
use ssgrl_core::optim::{AdamConfig, TrainConfig};

use crate::error::{display_name, read_to_string, Error, Result};
use crate::synth::SyntheticSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Paper,
    Toy,
}

impl Profile {
    pub fn base(self, categories: usize, width: usize, height: usize) -> ModelConfig {
        match self {
            Profile::Paper => ModelConfig::paper(categories, width, height),
            Profile::Toy => ModelConfig::toy(categories, width, height),
        }
    }

    pub fn default_lr(self) -> f64 {
        match self {
            Profile::Paper => 1e-5,
            Profile::Toy => 1e-3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Profile::Paper => "paper",
            Profile::Toy => "toy",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub categories: Option<usize>,
    pub width: Option<usize>,
    pub height: Option<usize>,
    pub channels: Option<usize>,
    pub embed_dim: Option<usize>,
    pub joint_dim: Option<usize>,
    pub fused_dim: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub output_dim: Option<usize>,
    pub steps: Option<usize>,
    pub variant: Option<String>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub eps: Option<f64>,
    pub plateau_patience: Option<usize>,
    pub plateau_threshold: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub data: Option<SyntheticSpec>,
}

impl RunConfig {
    pub fn toy() -> Self {
        RunConfig {
            profile: Profile::Toy,
            model: ModelSection::default(),
            train: TrainSection::default(),
            data: None,
        }
    }

    pub fn parse(text: &str, file: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            file: file.into(),
            line: e.line(),
            msg: e.to_string(),
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?, &display_name(path))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// Model configuration for a dataset with `categories` classes on a
    /// `width × height` grid.
    pub fn model_config(
        &self,
        categories: usize,
        width: usize,
        height: usize,
    ) -> Result<ModelConfig> {
        let m = &self.model;
        let mut cfg = self.profile.base(categories, width, height);
        let dataset = [
            ("categories", m.categories, categories),
            ("width", m.width, width),
            ("height", m.height, height),
        ];
        for (name, given, actual) in dataset {
            if let Some(v) = given.filter(|&v| v != actual) {
                return Err(Error::Validation(format!(
                    "config sets {name}={v} but the dataset has {actual}"
                )));
            }
        }
        let pinned = [
            ("channels", m.channels, cfg.channels),
            ("embed_dim", m.embed_dim, cfg.embed_dim),
            ("joint_dim", m.joint_dim, cfg.joint_dim),
            ("fused_dim", m.fused_dim, cfg.fused_dim),
            ("hidden_dim", m.hidden_dim, cfg.hidden_dim),
            ("output_dim", m.output_dim, cfg.output_dim),
            ("steps", m.steps, cfg.steps),
        ];
        for (name, given, fixed) in pinned {
            if let Some(v) = given.filter(|&v| v != fixed) {
                return Err(Error::Validation(format!(
                    "profile `{}` pins {name}={fixed}, config sets {v}",
                    self.profile.as_str()
                )));
            }
        }
        if let Some(v) = &m.variant {
            cfg.variant = v
                .parse::<Variant>()
                .map_err(|e| Error::Validation(e.to_string()))?;
        }
        cfg.seed = m.seed.unwrap_or(0);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.train;
        let d = TrainConfig::default();
        let a = AdamConfig::default();
        let cfg = TrainConfig {
            epochs: t.epochs.unwrap_or(d.epochs),
            batch_size: t.batch_size.unwrap_or(d.batch_size),
            adam: AdamConfig {
                lr: t.lr.unwrap_or(self.profile.default_lr()),
                beta1: t.beta1.unwrap_or(a.beta1),
                beta2: t.beta2.unwrap_or(a.beta2),
                eps: t.eps.unwrap_or(a.eps),
            },
            plateau_patience: t.plateau_patience.unwrap_or(d.plateau_patience),
            plateau_threshold: t.plateau_threshold.unwrap_or(d.plateau_threshold),
            seed: t.seed.unwrap_or(d.seed),
        };
        if cfg.batch_size == 0 {
            return Err(Error::Validation("batch_size must be at least 1".into()));
        }
        if !(cfg.adam.lr > 0.0 && cfg.adam.lr.is_finite()) {
            return Err(Error::Validation(format!(
                "lr must be positive, got {}",
                cfg.adam.lr
            )));
        }
        if !(0.0..1.0).contains(&cfg.adam.beta1) || !(0.0..1.0).contains(&cfg.adam.beta2) {
            return Err(Error::Validation(
                "beta1 and beta2 must lie in [0, 1)".into(),
            ));
        }
        if cfg.adam.eps.is_nan()
            || cfg.adam.eps <= 0.0
            || cfg.plateau_threshold.is_nan()
            || cfg.plateau_threshold < 0.0
        {
            return Err(Error::Validation(
                "eps must be positive and plateau_threshold non-negative".into(),
            ));
        }
        Ok(cfg)
    }
}
