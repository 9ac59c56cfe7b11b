use daa_autograd::{AdamConfig, Real};
use serde::{Deserialize, Serialize};

use super::batch::PlanPolicy;
use super::losses::{LossWeights, DEFAULT_LAMBDA1};
use crate::error::{DaaError, Result};

/// Adversarial training of J, G and D.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Learning rate of J, D and (when not frozen) G.
    pub lr: Real,
    pub beta1: Real,
    pub beta2: Real,
    pub lambda1: Real,
    pub seed: u64,
    pub freeze_generator: bool,
    pub freeze_refiner: bool,
    /// Straight-through one-hot refiner output.
    pub hard: bool,
    /// Reconstruction epochs for G before adversarial training; stands in
    /// for a pretrained decoder.
    pub generator_pretrain_epochs: usize,
    pub generator_pretrain_lr: Real,
    /// Epochs teaching J to copy its input and fill holes.
    pub refiner_warmup_epochs: usize,
    pub refiner_warmup_lr: Real,
    /// Validation mixes scored after every epoch for model selection.
    pub val_mixes: usize,
    pub policy: PlanPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 90,
            batch_size: 8,
            lr: 1e-4,
            beta1: 0.0,
            beta2: 0.999,
            lambda1: DEFAULT_LAMBDA1,
            seed: 0,
            freeze_generator: false,
            freeze_refiner: false,
            hard: true,
            generator_pretrain_epochs: 40,
            generator_pretrain_lr: 2e-3,
            refiner_warmup_epochs: 5,
            refiner_warmup_lr: 2e-3,
            val_mixes: 16,
            policy: PlanPolicy::default(),
        }
    }
}

impl TrainConfig {
    /// Short schedule sized for a single CPU core.
    pub fn desk() -> Self {
        Self {
            epochs: 12,
            lr: 2e-4,
            generator_pretrain_epochs: 25,
            refiner_warmup_epochs: 4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !(self.generator_pretrain_lr >= 0.0) || !(self.refiner_warmup_lr >= 0.0) {
            return Err(DaaError::InvalidInput("learning rates must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(DaaError::InvalidInput("batch size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(DaaError::InvalidInput("adam betas must lie in [0, 1)".into()));
        }
        LossWeights::new(self.lambda1)?;
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights { lambda1: self.lambda1 }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: 1e-8,
        }
    }
}

/// Supervised training of a classifier (F, or a post-hoc evaluator).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: Real,
    pub beta1: Real,
    pub beta2: Real,
    pub seed: u64,
    /// Stop after this many epochs without validation improvement.
    pub patience: usize,
    /// Draw every class equally often within an epoch.
    pub balanced: bool,
    /// Apply the traditional augmentations to every training image.
    pub augment: bool,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            seed: 0,
            patience: 10,
            balanced: false,
            augment: false,
        }
    }
}

impl ClassifierTrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || self.batch_size == 0 {
            return Err(DaaError::InvalidInput("classifier training needs lr >= 0 and batch size >= 1".into()));
        }
        Ok(())
    }
}
