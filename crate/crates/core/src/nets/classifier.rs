use daa_autograd::{softmax_channels_value, Graph, ParamSet, Real, Tensor, Var};
use serde::{Deserialize, Serialize};

use super::generator::check_layout;
use super::init::{push_conv, push_linear, rng};
use crate::error::{DaaError, Result};

pub const BN_EPS: Real = 1e-5;
pub const BN_MOMENTUM: Real = 0.1;
const BLOCKS: usize = 7;
const POOL_AFTER: [bool; BLOCKS] = [false, true, false, true, false, true, true];
const POOLS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub height: usize,
    pub width: usize,
    pub base_width: usize,
    pub fc_hidden: [usize; 2],
    pub classes: usize,
}

impl ClassifierConfig {
    pub fn new(height: usize, width: usize, classes: usize) -> Self {
        Self {
            height,
            width,
            base_width: 8,
            fc_hidden: [64, 32],
            classes,
        }
    }

    fn block_widths(&self) -> [usize; BLOCKS] {
        let w = self.base_width;
        [w, w, 2 * w, 2 * w, 4 * w, 4 * w, 4 * w]
    }

    /// Spatial size after the pooling stages; a stage is skipped once either
    /// side is down to one pixel.
    fn pooled(&self) -> (usize, usize) {
        let (mut h, mut w) = (self.height, self.width);
        for _ in 0..POOLS {
            if h >= 2 && w >= 2 {
                h /= 2;
                w /= 2;
            }
        }
        (h, w)
    }

    fn flat_dim(&self) -> usize {
        let (h, w) = self.pooled();
        4 * self.base_width * h * w
    }

    /// Length of the penultimate feature vector.
    pub fn feature_dim(&self) -> usize {
        self.fc_hidden[1]
    }
}

/// VGG-style pathology classifier F: seven conv-BN-ReLU blocks (2x2 max
/// pooling after blocks 2, 4, 6 and 7) and three fully connected layers.
/// Inputs of 8 pixels skip the last pooling stage.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub params: ParamSet,
    /// Running batch-norm statistics, `bn{i}.mean` / `bn{i}.var`.
    pub buffers: ParamSet,
    pub config: ClassifierConfig,
}

/// Outputs of a classifier pass.
pub struct ClassifierOut {
    pub logits: Var,
    pub features: Var,
    /// Per-block batch statistics (training mode only).
    pub batch_stats: Vec<(Vec<Real>, Vec<Real>)>,
}

impl Classifier {
    pub fn new(config: ClassifierConfig, seed: u64) -> Result<Self> {
        let side_ok = |s: usize| s == 8 || (s >= 16 && s.is_multiple_of(16));
        if !side_ok(config.height) || !side_ok(config.width) {
            return Err(DaaError::InvalidInput(format!(
                "classifier sides must be 8 or a multiple of 16, got {}x{}",
                config.height, config.width
            )));
        }
        if config.classes < 2 {
            return Err(DaaError::InvalidInput("classifier needs at least two classes".into()));
        }
        let mut r = rng(seed);
        let mut p = ParamSet::new();
        let mut buffers = ParamSet::new();
        let mut cin = 1;
        for (i, &w) in config.block_widths().iter().enumerate() {
            push_conv(&mut p, &format!("conv{i}"), cin, w, 3, &mut r);
            p.push(format!("bn{i}.gamma"), Tensor::full(&[w], 1.0));
            p.push(format!("bn{i}.beta"), Tensor::zeros(&[w]));
            buffers.push(format!("bn{i}.mean"), Tensor::zeros(&[w]));
            buffers.push(format!("bn{i}.var"), Tensor::full(&[w], 1.0));
            cin = w;
        }
        push_linear(&mut p, "fc0", config.flat_dim(), config.fc_hidden[0], &mut r);
        push_linear(&mut p, "fc1", config.fc_hidden[0], config.fc_hidden[1], &mut r);
        push_linear(&mut p, "fc2", config.fc_hidden[1], config.classes, &mut r);
        Ok(Self {
            params: p,
            buffers,
            config,
        })
    }

    pub fn from_params(params: ParamSet, buffers: ParamSet, height: usize, width: usize) -> Result<Self> {
        let get = |n: &str| {
            params
                .find(n)
                .ok_or_else(|| DaaError::InvalidInput(format!("classifier parameters lack {n}")))
        };
        let config = ClassifierConfig {
            height,
            width,
            base_width: get("conv0.w")?.dim(0),
            fc_hidden: [get("fc0.w")?.dim(0), get("fc1.w")?.dim(0)],
            classes: get("fc2.w")?.dim(0),
        };
        let fresh = Self::new(config, 0)?;
        check_layout(&fresh.params, &params, "classifier")?;
        check_layout(&fresh.buffers, &buffers, "classifier statistics")?;
        Ok(Self {
            params,
            buffers,
            config,
        })
    }

    /// `x[N, 1, H, W]`. In training mode batch statistics are used and
    /// returned; otherwise the running statistics in `buffers`.
    pub fn forward(&self, g: &Graph, v: &[Var], x: Var, train: bool) -> ClassifierOut {
        let mut h = x;
        let mut stats = Vec::new();
        for i in 0..BLOCKS {
            h = g.conv2d(h, v[4 * i], Some(v[4 * i + 1]), 1, 1);
            h = if train {
                let (y, m, var) = g.batch_norm(h, BN_EPS);
                stats.push((m, var));
                y
            } else {
                let mean = self.buffers.get(2 * i);
                let var = self.buffers.get(2 * i + 1);
                let inv: Vec<Real> = var.data().iter().map(|s| 1.0 / (s + BN_EPS).sqrt()).collect();
                let shift: Vec<Real> = mean.data().iter().zip(&inv).map(|(m, r)| -m * r).collect();
                let c = inv.len();
                let y = g.scale_channels(h, g.constant(Tensor::new(&[c], inv)));
                g.shift_channels(y, g.constant(Tensor::new(&[c], shift)))
            };
            h = g.shift_channels(g.scale_channels(h, v[4 * i + 2]), v[4 * i + 3]);
            h = g.relu(h);
            let s = g.shape(h);
            if POOL_AFTER[i] && s[2] >= 2 && s[3] >= 2 {
                h = g.max_pool2(h);
            }
        }
        let base = 4 * BLOCKS;
        let flat = g.flatten(h);
        let f0 = g.relu(g.linear(flat, v[base], Some(v[base + 1])));
        let features = g.relu(g.linear(f0, v[base + 2], Some(v[base + 3])));
        let logits = g.linear(features, v[base + 4], Some(v[base + 5]));
        ClassifierOut {
            logits,
            features,
            batch_stats: stats,
        }
    }

    /// Fold batch statistics into the running averages.
    pub fn update_running_stats(&mut self, stats: &[(Vec<Real>, Vec<Real>)]) {
        for (i, (m, v)) in stats.iter().enumerate() {
            for (dst, src) in [(2 * i, m), (2 * i + 1, v)] {
                for (r, s) in self.buffers.get_mut(dst).data_mut().iter_mut().zip(src) {
                    *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * s;
                }
            }
        }
    }

    fn check_input(&self, images: &Tensor) -> Result<()> {
        let s = images.shape();
        if s.len() != 4 || s[1] != 1 || s[2] != self.config.height || s[3] != self.config.width {
            return Err(DaaError::ShapeMismatch(format!(
                "classifier expects [N, 1, {}, {}], got {s:?}",
                self.config.height, self.config.width
            )));
        }
        Ok(())
    }

    /// Eval-mode class probabilities, one row per image.
    pub fn predict(&self, images: &Tensor) -> Result<Vec<Vec<Real>>> {
        self.check_input(images)?;
        let g = Graph::new();
        let v = self.params.bind(&g, false);
        let out = self.forward(&g, &v, g.constant(images.clone()), false);
        let p = softmax_channels_value(&g.value(out.logits));
        Ok(p.data().chunks(self.config.classes).map(<[Real]>::to_vec).collect())
    }

    /// Eval-mode penultimate features, one row per image.
    pub fn embed(&self, images: &Tensor) -> Result<Vec<Vec<Real>>> {
        self.check_input(images)?;
        let g = Graph::new();
        let v = self.params.bind(&g, false);
        let out = self.forward(&g, &v, g.constant(images.clone()), false);
        let f = g.value(out.features);
        Ok(f.data().chunks(self.config.feature_dim()).map(<[Real]>::to_vec).collect())
    }
}

/// Probability vector for a single image `[1, 1, H, W]`.
pub fn classify(image: &Tensor, f: &Classifier) -> Result<Vec<Real>> {
    Ok(f.predict(image)?.remove(0))
}
