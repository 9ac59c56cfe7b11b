//! Small two-level U-Net used to score datasets by segmentation Dice.

use daa_autograd::{Adam, AdamConfig, Graph, ParamSet, Real, Tensor, Var};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::traditional::{augment_pair, TraditionalConfig};
use crate::error::{DaaError, Result};
use crate::factors::Mask;
use crate::nets::init::{push_conv, rng};
use crate::phantom::SubjectRecord;

#[derive(Clone, Debug, PartialEq)]
pub struct Segmenter {
    pub params: ParamSet,
    /// Output classes, background included.
    pub classes: usize,
}

impl Segmenter {
    pub fn new(width: usize, classes: usize, seed: u64) -> Self {
        let mut r = rng(seed);
        let mut p = ParamSet::new();
        let w = width;
        push_conv(&mut p, "enc1a", 1, w, 3, &mut r);
        push_conv(&mut p, "enc1b", w, w, 3, &mut r);
        push_conv(&mut p, "enc2a", w, 2 * w, 3, &mut r);
        push_conv(&mut p, "enc2b", 2 * w, 2 * w, 3, &mut r);
        push_conv(&mut p, "mid", 2 * w, 4 * w, 3, &mut r);
        push_conv(&mut p, "dec2", 6 * w, 2 * w, 3, &mut r);
        push_conv(&mut p, "dec1", 3 * w, w, 3, &mut r);
        push_conv(&mut p, "head", w, classes, 1, &mut r);
        Self { params: p, classes }
    }

    /// `[N, 1, H, W]` -> logits `[N, classes, H, W]`. Sides divisible by 4.
    pub fn forward(&self, g: &Graph, v: &[Var], x: Var) -> Var {
        let conv = |x: Var, i: usize| g.relu(g.conv2d(x, v[2 * i], Some(v[2 * i + 1]), 1, 1));
        let e1 = conv(conv(x, 0), 1);
        let e2 = conv(conv(g.max_pool2(e1), 2), 3);
        let m = conv(g.max_pool2(e2), 4);
        let d2 = conv(g.concat_channels(g.upsample2(m), e2), 5);
        let d1 = conv(g.concat_channels(g.upsample2(d2), e1), 6);
        g.conv2d(d1, v[14], Some(v[15]), 1, 0)
    }

    /// Per-pixel argmax labels of every image.
    pub fn predict(&self, images: &Tensor) -> Vec<Vec<u8>> {
        let g = Graph::new();
        let v = self.params.bind(&g, false);
        let logits = self.forward(&g, &v, g.constant(images.clone()));
        let t = g.value(logits);
        let (n, c, h, w) = (t.dim(0), t.dim(1), t.dim(2), t.dim(3));
        let plane = h * w;
        (0..n)
            .map(|i| {
                (0..plane)
                    .map(|p| {
                        let mut best = 0;
                        for k in 1..c {
                            if t.data()[(i * c + k) * plane + p] > t.data()[(i * c + best) * plane + p] {
                                best = k;
                            }
                        }
                        best as u8
                    })
                    .collect()
            })
            .collect()
    }
}

/// Label map with 0 for background and `k + 1` for structure `k`.
pub fn label_map(masks: &[Mask]) -> Vec<u8> {
    let (h, w) = masks.first().map_or((0, 0), Mask::dims);
    let mut out = vec![0u8; h * w];
    for (k, m) in masks.iter().enumerate() {
        for (o, &on) in out.iter_mut().zip(m.data()) {
            if on {
                *o = k as u8 + 1;
            }
        }
    }
    out
}

fn one_hot(labels: &[Vec<u8>], classes: usize, h: usize, w: usize) -> Tensor {
    let plane = h * w;
    let mut t = Tensor::zeros(&[labels.len(), classes, h, w]);
    for (i, l) in labels.iter().enumerate() {
        for (p, &c) in l.iter().enumerate() {
            t.data_mut()[(i * classes + c as usize) * plane + p] = 1.0;
        }
    }
    t
}

/// Mean per-pixel cross-entropy.
pub fn pixel_ce(g: &Graph, logits: Var, target: &Tensor) -> Var {
    let n = target.dim(0) * target.dim(2) * target.dim(3);
    let logp = g.log_clamped(g.softmax_channels(logits), 1e-12);
    let picked = g.sum(g.mul(logp, g.constant(target.clone())));
    g.scale(picked, -1.0 / n as Real)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmenterConfig {
    pub width: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: Real,
    pub augment: bool,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            width: 8,
            epochs: 12,
            batch_size: 8,
            lr: 2e-3,
            augment: true,
        }
    }
}

/// Train a fresh segmenter on the records' structure masks.
pub fn train_segmenter(
    records: &[&SubjectRecord],
    cfg: &SegmenterConfig,
    aug: &TraditionalConfig,
    seed: u64,
) -> Result<Segmenter> {
    let first = records
        .first()
        .ok_or_else(|| DaaError::InsufficientSubjects("no images to train a segmenter".into()))?;
    let (h, w) = (first.height(), first.width());
    if h % 4 != 0 || w % 4 != 0 {
        return Err(DaaError::InvalidInput(format!("segmenter sides must be divisible by 4, got {h}x{w}")));
    }
    let classes = first.masks.len() + 1;
    let mut seg = Segmenter::new(cfg.width, classes, seed);
    let mut opt = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            beta1: 0.9,
            ..AdamConfig::default()
        },
        seg.params.tensors(),
    );
    let maps: Vec<Vec<u8>> = records.iter().map(|r| label_map(&r.masks)).collect();
    let mut r = rng(seed.wrapping_add(1));
    let mut idx: Vec<usize> = (0..records.len()).collect();
    for epoch in 0..cfg.epochs {
        idx.shuffle(&mut r);
        for chunk in idx.chunks(cfg.batch_size.max(1)) {
            let mut images = Vec::with_capacity(chunk.len());
            let mut labels = Vec::with_capacity(chunk.len());
            for &i in chunk {
                if cfg.augment {
                    let (im, l) = augment_pair(&records[i].image, &maps[i], aug, &mut r);
                    images.push(im);
                    labels.push(l);
                } else {
                    images.push(records[i].image.clone());
                    labels.push(maps[i].clone());
                }
            }
            let target = one_hot(&labels, classes, h, w);
            let g = Graph::new();
            let v = seg.params.bind(&g, true);
            let logits = seg.forward(&g, &v, g.constant(Tensor::stack(&images)));
            let loss = pixel_ce(&g, logits, &target);
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(DaaError::NonFiniteLoss {
                    step: opt.steps_taken(),
                    diagnostics: format!("segmenter loss {value} in epoch {epoch}"),
                });
            }
            let grads = seg.params.grads(&g.backward(loss), &v);
            opt.step(seg.params.tensors_mut(), &grads);
        }
    }
    Ok(seg)
}

/// `2|A∩B| / (|A| + |B|)`; two empty masks score 1.
pub fn dice(a: &Mask, b: &Mask) -> Real {
    let (na, nb) = (a.count(), b.count());
    if na + nb == 0 {
        return 1.0;
    }
    2.0 * a.and(b).count() as Real / (na + nb) as Real
}

/// Mean Dice over structures and records.
pub fn mean_dice(seg: &Segmenter, records: &[&SubjectRecord]) -> Real {
    let mut total = 0.0;
    let mut n = 0usize;
    for chunk in records.chunks(16) {
        let pred = seg.predict(&Tensor::stack(&chunk.iter().map(|r| r.image.clone()).collect::<Vec<_>>()));
        for (p, r) in pred.iter().zip(chunk) {
            let (h, w) = (r.height(), r.width());
            for (k, gt) in r.masks.iter().enumerate() {
                let m = Mask::from_vec(h, w, p.iter().map(|&c| c as usize == k + 1).collect());
                total += dice(&m, gt);
                n += 1;
            }
        }
    }
    total / n.max(1) as Real
}
