//! Supervised stages: classifier training, generator reconstruction and
//! refiner warm-up.

use daa_autograd::{Adam, AdamConfig, Graph, Real, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::ClassifierTrainConfig;
use super::losses::{masked_l1_var, path_var};
use crate::augment::traditional::{augment_image, TraditionalConfig};
use crate::blend::{blend_from_support, Refiner};
use crate::error::{DaaError, Result};
use crate::factors::{heart_mask, Mask};
use crate::model::argmax;
use crate::nets::init::{rng, DetRng};
use crate::nets::{Classifier, Generator};
use crate::phantom::SubjectRecord;

/// One image with its class.
#[derive(Clone, Debug, PartialEq)]
pub struct Labeled {
    /// `[1, 1, H, W]`
    pub image: Tensor,
    pub label: usize,
}

impl Labeled {
    pub fn from_record(r: &SubjectRecord) -> Self {
        Self {
            image: r.image.clone(),
            label: r.pathology.class_index,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassifierReport {
    pub train_loss: Vec<Real>,
    pub val_accuracy: Vec<Real>,
    pub best_epoch: Option<usize>,
}

/// Fraction of items whose argmax prediction equals the label.
pub fn accuracy(f: &Classifier, items: &[Labeled]) -> Result<Real> {
    Ok(predictions(f, items)?.iter().zip(items).filter(|(p, it)| **p == it.label).count() as Real
        / items.len().max(1) as Real)
}

pub fn predictions(f: &Classifier, items: &[Labeled]) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(items.len());
    for chunk in items.chunks(32) {
        let batch = Tensor::stack(&chunk.iter().map(|it| it.image.clone()).collect::<Vec<_>>());
        out.extend(f.predict(&batch)?.iter().map(|p| argmax(p).0));
    }
    Ok(out)
}

/// Per-class recall; classes absent from `items` give `None`.
pub fn class_recall(f: &Classifier, items: &[Labeled], classes: usize) -> Result<Vec<Option<Real>>> {
    let pred = predictions(f, items)?;
    let mut hit = vec![0usize; classes];
    let mut total = vec![0usize; classes];
    for (p, it) in pred.iter().zip(items) {
        total[it.label] += 1;
        if *p == it.label {
            hit[it.label] += 1;
        }
    }
    Ok(hit
        .iter()
        .zip(&total)
        .map(|(&h, &t)| (t > 0).then(|| h as Real / t as Real))
        .collect())
}

fn epoch_order(items: &[Labeled], classes: usize, balanced: bool, r: &mut DetRng) -> Vec<usize> {
    if !balanced {
        let mut idx: Vec<usize> = (0..items.len()).collect();
        idx.shuffle(r);
        return idx;
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, it) in items.iter().enumerate() {
        by_class[it.label].push(i);
    }
    let present: Vec<&Vec<usize>> = by_class.iter().filter(|c| !c.is_empty()).collect();
    (0..items.len())
        .map(|_| {
            let c = present[r.random_range(0..present.len())];
            c[r.random_range(0..c.len())]
        })
        .collect()
}

/// Train `f` with cross-entropy. With a validation set the parameters of the
/// best validation epoch are kept and training stops after `patience`
/// epochs without improvement.
pub fn train_classifier(
    f: &mut Classifier,
    train: &[Labeled],
    val: Option<&[Labeled]>,
    cfg: &ClassifierTrainConfig,
    aug: &TraditionalConfig,
) -> Result<ClassifierReport> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(DaaError::InsufficientSubjects("no training images".into()));
    }
    let classes = f.config.classes;
    if let Some(bad) = train.iter().find(|it| it.label >= classes) {
        return Err(DaaError::InvalidInput(format!("label {} outside {classes} classes", bad.label)));
    }
    let mut opt = Adam::new(cfg.adam(), f.params.tensors());
    let mut r = rng(cfg.seed);
    let mut report = ClassifierReport::default();
    let mut best: Option<(Real, Classifier)> = None;
    let mut since_best = 0;
    for epoch in 0..cfg.epochs {
        let order = epoch_order(train, classes, cfg.balanced, &mut r);
        let mut losses = Vec::new();
        for chunk in order.chunks(cfg.batch_size) {
            // batch statistics of one image are degenerate
            if chunk.len() < 2 {
                continue;
            }
            let images: Vec<Tensor> = chunk
                .iter()
                .map(|&i| {
                    if cfg.augment {
                        augment_image(&train[i].image, aug, &mut r)
                    } else {
                        train[i].image.clone()
                    }
                })
                .collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| train[i].label).collect();
            let g = Graph::new();
            let v = f.params.bind(&g, true);
            let out = f.forward(&g, &v, g.constant(Tensor::stack(&images)), true);
            let loss = path_var(&g, out.logits, &labels);
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(DaaError::NonFiniteLoss {
                    step: opt.steps_taken(),
                    diagnostics: format!("classifier loss {value} in epoch {epoch}"),
                });
            }
            losses.push(value);
            let grads = f.params.grads(&g.backward(loss), &v);
            opt.step(f.params.tensors_mut(), &grads);
            f.update_running_stats(&out.batch_stats);
        }
        report
            .train_loss
            .push(losses.iter().sum::<Real>() / losses.len().max(1) as Real);
        if let Some(val) = val {
            let acc = accuracy(f, val)?;
            report.val_accuracy.push(acc);
            if best.as_ref().is_none_or(|(b, _)| acc > *b) {
                best = Some((acc, f.clone()));
                report.best_epoch = Some(epoch);
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience {
                    break;
                }
            }
        }
    }
    if let Some((_, b)) = best {
        *f = b;
    }
    Ok(report)
}

/// Reconstruction pretraining of G: L1 between `G(C, z)` and the image.
/// Returns the mean loss of every epoch.
pub fn pretrain_generator(
    gen: &mut Generator,
    records: &[&SubjectRecord],
    epochs: usize,
    batch_size: usize,
    lr: Real,
    seed: u64,
) -> Result<Vec<Real>> {
    let mut opt = Adam::new(
        AdamConfig {
            lr,
            ..AdamConfig::default()
        },
        gen.params.tensors(),
    );
    let mut r = rng(seed);
    let mut out = Vec::with_capacity(epochs);
    let mut idx: Vec<usize> = (0..records.len()).collect();
    for epoch in 0..epochs {
        idx.shuffle(&mut r);
        let mut total = 0.0;
        for chunk in idx.chunks(batch_size.max(1)) {
            let pick = |f: &dyn Fn(&SubjectRecord) -> Tensor| Tensor::stack(&chunk.iter().map(|&i| f(records[i])).collect::<Vec<_>>());
            let c = pick(&|s| s.anatomy.to_tensor());
            let z = pick(&|s| s.imaging.to_tensor());
            let img = pick(&|s| s.image.clone());
            let g = Graph::new();
            let v = gen.params.bind(&g, true);
            let y = gen.forward(&g, &v, g.constant(c), g.constant(z));
            let none = Tensor::zeros(&[chunk.len(), 1, img.dim(2), img.dim(3)]);
            let loss = masked_l1_var(&g, g.constant(img), y, &none);
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(DaaError::NonFiniteLoss {
                    step: opt.steps_taken(),
                    diagnostics: format!("generator reconstruction loss {value} in epoch {epoch}"),
                });
            }
            total += value * chunk.len() as Real;
            let grads = gen.params.grads(&g.backward(loss), &v);
            opt.step(gen.params.tensors_mut(), &grads);
        }
        out.push(total / records.len().max(1) as Real);
    }
    Ok(out)
}

/// Punch square holes (all channels zero) at random spots on the heart
/// outline; returns the damaged anatomy tensor and the hole mask.
fn punch_holes(rec: &SubjectRecord, r: &mut DetRng) -> (Tensor, Mask) {
    let c = &rec.anatomy;
    let (h, w) = c.dims();
    let heart = heart_mask(c).mask;
    let edge: Vec<(usize, usize)> = (0..h * w)
        .map(|i| (i / w, i % w))
        .filter(|&(y, x)| heart.get(y, x) && crate::factors::dilate(&heart.xor(&Mask::full(h, w)), 1).get(y, x))
        .collect();
    let mut holes = Mask::new(h, w);
    let scale = (h.max(w) as Real / 64.0).max(0.25);
    for _ in 0..3 {
        let Some(&(cy, cx)) = edge.get(r.random_range(0..edge.len().max(1))) else {
            break;
        };
        let half = ((r.random_range(1.0..=3.0) * scale).round() as isize).max(1);
        for y in cy as isize - half..=cy as isize + half {
            for x in cx as isize - half..=cx as isize + half {
                if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
                    holes.set(y as usize, x as usize, true);
                }
            }
        }
    }
    let mut t = c.to_tensor();
    let plane = h * w;
    for k in 0..c.num_channels() {
        for (j, &hole) in holes.data().iter().enumerate() {
            if hole {
                t.data_mut()[k * plane + j] = 0.0;
            }
        }
    }
    (t, holes)
}

/// Teach J to reproduce its input and to fill pixels no channel covers.
/// Returns the mean L1 of every epoch.
#[allow(clippy::too_many_arguments)]
pub fn warmup_refiner(
    refiner: &mut Refiner,
    records: &[&SubjectRecord],
    epochs: usize,
    batch_size: usize,
    lr: Real,
    dilation_radius: usize,
    blur_sigma: Real,
    seed: u64,
) -> Result<Vec<Real>> {
    let mut opt = Adam::new(
        AdamConfig {
            lr,
            ..AdamConfig::default()
        },
        refiner.params.tensors(),
    );
    let mut r = rng(seed);
    let mut out = Vec::with_capacity(epochs);
    let mut idx: Vec<usize> = (0..records.len()).collect();
    for epoch in 0..epochs {
        idx.shuffle(&mut r);
        let mut total = 0.0;
        for chunk in idx.chunks(batch_size.max(1)) {
            let mut inputs = Vec::new();
            let mut phis = Vec::new();
            let mut targets = Vec::new();
            for &i in chunk {
                let (x, holes) = punch_holes(records[i], &mut r);
                inputs.push(x);
                phis.push(blend_from_support(&holes, dilation_radius, blur_sigma).to_tensor());
                targets.push(records[i].anatomy.to_tensor());
            }
            let phi = Tensor::stack(&phis);
            let noise = refiner.draw_noise(&phi, &mut r);
            let g = Graph::new();
            let v = refiner.params.bind(&g, true);
            let y = refiner.forward(&g, &v, g.constant(Tensor::stack(&inputs)), &noise, false);
            let none = Tensor::zeros(phi.shape());
            let loss = masked_l1_var(&g, g.constant(Tensor::stack(&targets)), y, &none);
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(DaaError::NonFiniteLoss {
                    step: opt.steps_taken(),
                    diagnostics: format!("refiner warm-up loss {value} in epoch {epoch}"),
                });
            }
            total += value * chunk.len() as Real;
            let grads = refiner.params.grads(&g.backward(loss), &v);
            opt.step(refiner.params.tensors_mut(), &grads);
        }
        out.push(total / records.len().max(1) as Real);
    }
    Ok(out)
}
