//! Generator, critics and the parameter checkpoint format.

pub mod checkpoint;
mod classifier;
mod discriminator;
mod generator;
pub mod init;

use daa_autograd::ParamSet;
use serde::{Deserialize, Serialize};

pub use checkpoint::Checkpoint;
pub use classifier::{classify, Classifier, ClassifierConfig, ClassifierOut, BN_EPS, BN_MOMENTUM};
pub use discriminator::{discriminate, Discriminator, DEFAULT_DISC_WIDTHS, LEAKY_SLOPE};
pub use generator::{adain, adain_value, generate, Generator, GeneratorConfig, ImagingFactor, ADAIN_EPS, DEFAULT_CODE_DIM};

use crate::blend::Refiner;
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetKind {
    Refiner,
    Generator,
    Discriminator,
    Classifier,
}

/// Architecture knobs shared by all four networks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub classes: usize,
    pub code_dim: usize,
    pub refiner_width: usize,
    pub generator_width: usize,
    pub mapper_hidden: usize,
    pub disc_widths: [usize; 4],
    pub classifier_width: usize,
    pub classifier_fc: [usize; 2],
    pub tau: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            channels: 12,
            classes: 4,
            code_dim: DEFAULT_CODE_DIM,
            refiner_width: 64,
            generator_width: 64,
            mapper_hidden: 32,
            disc_widths: DEFAULT_DISC_WIDTHS,
            classifier_width: 8,
            classifier_fc: [64, 32],
            tau: crate::blend::DEFAULT_TAU,
        }
    }
}

impl NetConfig {
    pub fn generator_config(&self) -> GeneratorConfig {
        GeneratorConfig {
            channels: self.channels,
            width: self.generator_width,
            code_dim: self.code_dim,
            mapper_hidden: self.mapper_hidden,
        }
    }

    pub fn classifier_config(&self) -> ClassifierConfig {
        ClassifierConfig {
            height: self.height,
            width: self.width,
            base_width: self.classifier_width,
            fc_hidden: self.classifier_fc,
            classes: self.classes,
        }
    }
}

/// Xavier-initialized parameters for one network, deterministic per seed.
pub fn init_params(kind: NetKind, config: &NetConfig, seed: u64) -> Result<ParamSet> {
    Ok(match kind {
        NetKind::Refiner => Refiner::new(config.channels, config.refiner_width, config.tau, seed).params,
        NetKind::Generator => Generator::new(config.generator_config(), seed).params,
        NetKind::Discriminator => Discriminator::new(config.disc_widths, seed).params,
        NetKind::Classifier => Classifier::new(config.classifier_config(), seed)?.params,
    })
}
