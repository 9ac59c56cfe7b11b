//! The end-to-end steps the command line chains together: phantom data,
//! F pretraining, DAA training and balancing augmentation.

use daa_autograd::Real;

use crate::augment::{
    augment_dataset, balancing_count, filter_by_confidence, synthesize_candidates, AugmentationRequest, GeneratedSample,
};
use crate::config::{AugmentOptions, PhantomOptions};
use crate::error::{DaaError, Result};
use crate::model::ModelBundle;
use crate::nets::{Classifier, NetConfig};
use crate::phantom::{build_manifest, generate_phantoms, Dataset, Split};
use crate::training::{accuracy, train_classifier, ClassifierReport, ClassifierTrainConfig, Labeled, TrainConfig};
use crate::augment::TraditionalConfig;
use crate::training::{fit_with, EpochLog, FitOutcome};

pub fn phantom_dataset(opts: &PhantomOptions) -> Result<Dataset> {
    let spec = opts.spec();
    let records = generate_phantoms(&spec)?;
    let manifest = build_manifest(&records, &spec.class_names(), opts.split_seed, opts.imbalance)?;
    Dataset::new(manifest, records)
}

/// Network config matched to a dataset's image size, channels and classes.
pub fn net_for(data: &Dataset, net: &NetConfig) -> Result<NetConfig> {
    let r = data
        .records
        .values()
        .next()
        .ok_or_else(|| DaaError::InsufficientSubjects("dataset has no subjects".into()))?;
    Ok(NetConfig {
        height: r.height(),
        width: r.width(),
        channels: r.anatomy.num_channels(),
        classes: data.num_classes(),
        ..*net
    })
}

fn labeled(data: &Dataset, s: Split) -> Vec<Labeled> {
    data.split_records(s).into_iter().map(Labeled::from_record).collect()
}

#[derive(Clone, Debug)]
pub struct Pretrained {
    pub classifier: Classifier,
    pub report: ClassifierReport,
    pub test_accuracy: Real,
}

/// Train F on the train split, early-stopped on val, scored on test.
pub fn pretrain_f(data: &Dataset, net: &NetConfig, cfg: &ClassifierTrainConfig, seed: u64) -> Result<Pretrained> {
    let net = net_for(data, net)?;
    let mut f = Classifier::new(net.classifier_config(), seed)?;
    let train = labeled(data, Split::Train);
    let val = labeled(data, Split::Val);
    let test = labeled(data, Split::Test);
    let cfg = ClassifierTrainConfig { seed, ..cfg.clone() };
    let v = (!val.is_empty()).then_some(val.as_slice());
    let report = train_classifier(&mut f, &train, v, &cfg, &TraditionalConfig::default())?;
    let test_accuracy = if test.is_empty() { Real::NAN } else { accuracy(&f, &test)? };
    Ok(Pretrained {
        classifier: f,
        report,
        test_accuracy,
    })
}

/// Fresh J, G and D around `f`, trained on `data`.
pub fn train_model(
    data: &Dataset,
    net: &NetConfig,
    f: Classifier,
    cfg: &TrainConfig,
    progress: impl FnMut(&EpochLog),
) -> Result<FitOutcome> {
    let net = net_for(data, net)?;
    let bundle = ModelBundle::new(net, f, cfg.seed)?;
    fit_with(bundle, data, cfg, progress)
}

#[derive(Clone, Debug)]
pub struct Augmented {
    pub dataset: Dataset,
    pub kept: Vec<GeneratedSample>,
    pub candidates: usize,
}

/// Synthesize, filter by F confidence and merge into the train split.
/// Without an explicit count the target is topped up to the largest group.
pub fn augment_to_balance(model: &ModelBundle, data: &Dataset, opts: &AugmentOptions, seed: u64) -> Result<Augmented> {
    let count = opts.count.unwrap_or_else(|| balancing_count(&data.manifest, opts.target));
    if count == 0 {
        return Ok(Augmented {
            dataset: data.clone(),
            kept: Vec::new(),
            candidates: 0,
        });
    }
    let req = AugmentationRequest {
        pool_multiplier: opts.pool_multiplier,
        ..AugmentationRequest::new(opts.target, count, seed)
    };
    let pool = synthesize_candidates(model, data, &req)?;
    let kept = filter_by_confidence(&pool, &req)?;
    Ok(Augmented {
        dataset: augment_dataset(data, &kept)?,
        kept,
        candidates: pool.len(),
    })
}
