//! The full training schedule: G reconstruction, J warm-up, then
//! donor-driven adversarial epochs with validation-mix model selection.

use std::fmt::Write as _;
use std::path::Path;

use daa_autograd::{Graph, Real};
use serde::{Deserialize, Serialize};

use super::batch::{draw_pairs, epoch_donors, TrainingBatch};
use super::config::TrainConfig;
use super::pretrain::{pretrain_generator, warmup_refiner};
use super::step::{StepReport, Trainer};
use crate::error::{DaaError, Result};
use crate::model::ModelBundle;
use crate::nets::init::rng;
use crate::phantom::{Dataset, Split, SubjectRecord};

pub const LOG_HEADER: &str = "epoch,step,L_D,L_G,L_path,L_cons,L_bg,L_total";

/// Mean losses of one epoch; `step` is the global step count at its end.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub step: u64,
    pub losses: StepReport,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitLog {
    pub epochs: Vec<EpochLog>,
    pub generator_pretrain: Vec<Real>,
    pub refiner_warmup: Vec<Real>,
    pub val_scores: Vec<Real>,
}

impl FitLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(LOG_HEADER);
        s.push('\n');
        for e in &self.epochs {
            let l = &e.losses;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                e.epoch, e.step, l.l_d, l.l_g, l.l_path, l.l_cons, l.l_bg, l.l_total
            );
        }
        s
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| DaaError::io(path, e))
    }
}

pub struct FitOutcome {
    /// Parameters of the best-scoring epoch.
    pub bundle: ModelBundle,
    pub log: FitLog,
    pub selected_epoch: Option<usize>,
}

/// Scores on a fixed set of validation mixes: mean classifier probability of
/// the target class, minus the gap between mean D scores on real and fake.
pub fn validation_score(m: &ModelBundle, batches: &[TrainingBatch], hard: bool, seed: u64) -> Result<Real> {
    let (mut prob, mut real, mut fake, mut n) = (0.0, 0.0, 0.0, 0usize);
    for (i, b) in batches.iter().enumerate() {
        let noise = m.refiner.draw_noise(&b.phi, &mut rng(seed.wrapping_add(i as u64)));
        let g = Graph::new();
        let j = m.refiner.params.bind(&g, false);
        let gv = m.generator.params.bind(&g, false);
        let d = m.discriminator.params.bind(&g, false);
        let c = m.refiner.forward(&g, &j, g.constant(b.c_hat.clone()), &noise, hard);
        let img = m.generator.forward(&g, &gv, c, g.constant(b.code.clone()));
        let df = m.discriminator.forward_masked(&g, &d, img, g.constant(b.fake_mask.clone()));
        let dr = m.discriminator.forward_masked(
            &g,
            &d,
            g.constant(b.donor_image.clone()),
            g.constant(b.donor_mask.clone()),
        );
        let probs = m.classifier.predict(&g.value(img))?;
        prob += probs.iter().zip(&b.labels).map(|(p, &l)| p[l]).sum::<Real>();
        real += g.value(dr).mean() * b.len() as Real;
        fake += g.value(df).mean() * b.len() as Real;
        n += b.len();
    }
    let n = n.max(1) as Real;
    Ok(prob / n - (real / n - fake / n).abs())
}

fn validation_batches(data: &Dataset, cfg: &TrainConfig, m: &ModelBundle) -> Result<Vec<TrainingBatch>> {
    let val = data.split_records(Split::Val);
    if cfg.val_mixes == 0 || val.is_empty() {
        return Ok(Vec::new());
    }
    let mut pool = data.split_records(Split::Train);
    pool.extend(val.iter().copied());
    let mut r = rng(cfg.seed ^ 0x5_EED0_F7A1);
    let donors: Vec<&SubjectRecord> = epoch_donors(&val, &mut r).into_iter().cycle().take(cfg.val_mixes).collect();
    let pairs = draw_pairs(&donors, &pool, &mut r)?;
    pairs
        .chunks(cfg.batch_size)
        .map(|c| TrainingBatch::from_pairs(c, &cfg.policy, data, m.dilation_radius, m.blur_sigma))
        .collect()
}

fn mean_report(rs: &[StepReport]) -> StepReport {
    let n = rs.len().max(1) as Real;
    let sum = |f: fn(&StepReport) -> Real| rs.iter().map(f).sum::<Real>() / n;
    StepReport {
        l_d: sum(|r| r.l_d),
        l_g: sum(|r| r.l_g),
        l_path: sum(|r| r.l_path),
        l_cons: sum(|r| r.l_cons),
        l_bg: sum(|r| r.l_bg),
        l_total: sum(|r| r.l_total),
    }
}

/// Train J, G and D on the train split. F inside `bundle` stays fixed.
/// With `epochs == 0` the bundle comes back untouched.
pub fn fit(bundle: ModelBundle, data: &Dataset, cfg: &TrainConfig) -> Result<FitOutcome> {
    fit_with(bundle, data, cfg, |_| {})
}

/// As [`fit`], calling `progress` after every epoch.
pub fn fit_with(
    mut bundle: ModelBundle,
    data: &Dataset,
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochLog),
) -> Result<FitOutcome> {
    cfg.validate()?;
    let mut log = FitLog::default();
    if cfg.epochs == 0 {
        return Ok(FitOutcome {
            bundle,
            log,
            selected_epoch: None,
        });
    }
    let train = data.split_records(Split::Train);
    if train.len() < 2 {
        return Err(DaaError::InsufficientSubjects(format!(
            "training needs at least 2 subjects, train split has {}",
            train.len()
        )));
    }
    if !cfg.freeze_generator && cfg.generator_pretrain_epochs > 0 {
        log.generator_pretrain = pretrain_generator(
            &mut bundle.generator,
            &train,
            cfg.generator_pretrain_epochs,
            cfg.batch_size,
            cfg.generator_pretrain_lr,
            cfg.seed.wrapping_add(11),
        )?;
    }
    if !cfg.freeze_refiner && cfg.refiner_warmup_epochs > 0 {
        log.refiner_warmup = warmup_refiner(
            &mut bundle.refiner,
            &train,
            cfg.refiner_warmup_epochs,
            cfg.batch_size,
            cfg.refiner_warmup_lr,
            bundle.dilation_radius,
            bundle.blur_sigma,
            cfg.seed.wrapping_add(12),
        )?;
    }
    let val_batches = validation_batches(data, cfg, &bundle)?;
    let val_seed = cfg.seed.wrapping_add(13);
    let mut trainer = Trainer::new(bundle, cfg.clone())?;
    let mut r = rng(cfg.seed);
    let mut best: Option<(Real, usize, ModelBundle)> = None;
    for epoch in 0..cfg.epochs {
        let donors = epoch_donors(&train, &mut r);
        let pairs = draw_pairs(&donors, &train, &mut r)?;
        let mut reports = Vec::new();
        for chunk in pairs.chunks(cfg.batch_size) {
            let batch = TrainingBatch::from_pairs(
                chunk,
                &cfg.policy,
                data,
                trainer.bundle.dilation_radius,
                trainer.bundle.blur_sigma,
            )?;
            let seed = cfg.seed.wrapping_mul(0x9E37_79B9).wrapping_add(trainer.steps());
            reports.push(trainer.train_step(&batch, seed)?);
        }
        let entry = EpochLog {
            epoch,
            step: trainer.steps(),
            losses: mean_report(&reports),
        };
        progress(&entry);
        log.epochs.push(entry);
        if !val_batches.is_empty() {
            let s = validation_score(&trainer.bundle, &val_batches, cfg.hard, val_seed)?;
            log.val_scores.push(s);
            if best.as_ref().is_none_or(|(b, _, _)| s > *b) {
                best = Some((s, epoch, trainer.bundle.clone()));
            }
        }
    }
    let (bundle, selected_epoch) = match best {
        Some((_, e, b)) => (b, Some(e)),
        None => (trainer.bundle, Some(cfg.epochs - 1)),
    };
    Ok(FitOutcome {
        bundle,
        log,
        selected_epoch,
    })
}
