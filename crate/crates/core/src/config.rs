//! The structured-text configuration read by `daa --config`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::{AugmentTarget, PosthocConfig, DEFAULT_POOL_MULTIPLIER};
use crate::error::{DaaError, Result};
use crate::nets::NetConfig;
use crate::phantom::{Imbalance, PhantomSpec};
use crate::training::{ClassifierTrainConfig, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomOptions {
    pub n: usize,
    pub size: usize,
    pub seed: u64,
    pub split_seed: u64,
    pub imbalance: Option<Imbalance>,
}

impl Default for PhantomOptions {
    fn default() -> Self {
        Self {
            n: 200,
            size: 64,
            seed: 0,
            split_seed: 0,
            imbalance: None,
        }
    }
}

impl PhantomOptions {
    pub fn spec(&self) -> PhantomSpec {
        PhantomSpec {
            n: self.n,
            size: self.size,
            seed: self.seed,
            ..PhantomSpec::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentOptions {
    pub target: AugmentTarget,
    /// Samples to add; unset means enough to match the largest group.
    pub count: Option<usize>,
    pub pool_multiplier: usize,
}

impl Default for AugmentOptions {
    fn default() -> Self {
        Self {
            target: AugmentTarget::Class(3),
            count: None,
            pool_multiplier: DEFAULT_POOL_MULTIPLIER,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeOptions {
    pub addr: String,
    pub workers: usize,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            addr: "127.0.0.1:8080".into(),
            workers: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DaaConfig {
    pub phantom: PhantomOptions,
    pub net: NetConfig,
    /// Pretraining of the pathology classifier F.
    pub classifier: ClassifierTrainConfig,
    pub train: TrainConfig,
    pub augment: AugmentOptions,
    pub eval: PosthocConfig,
    pub serve: ServeOptions,
}

/// Network widths sized for one CPU core.
pub fn desk_net() -> NetConfig {
    NetConfig {
        refiner_width: 16,
        generator_width: 16,
        disc_widths: [8, 16, 32, 32],
        classifier_width: 16,
        ..NetConfig::default()
    }
}

/// F pretraining defaults: class-balanced sampling and traditional
/// augmentation, otherwise a rare class with a handful of subjects is
/// memorized.
pub fn desk_classifier() -> ClassifierTrainConfig {
    ClassifierTrainConfig {
        epochs: 30,
        lr: 1e-3,
        balanced: true,
        augment: true,
        patience: 10,
        ..ClassifierTrainConfig::default()
    }
}

impl Default for DaaConfig {
    fn default() -> Self {
        Self {
            phantom: PhantomOptions::default(),
            net: desk_net(),
            classifier: desk_classifier(),
            train: TrainConfig::desk(),
            augment: AugmentOptions::default(),
            eval: PosthocConfig::default(),
            serve: ServeOptions::default(),
        }
    }
}

impl DaaConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| DaaError::InvalidInput(format!("config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| DaaError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
