//! Post-hoc evaluation: fresh classifiers and segmenters trained on a
//! dataset's train split, scored on its test split over several seeds.

use std::fmt::Write as _;
use std::path::Path;

use daa_autograd::Real;
use serde::{Deserialize, Serialize};

use super::segmenter::{mean_dice, train_segmenter, SegmenterConfig};
use super::traditional::TraditionalConfig;
use crate::error::{DaaError, Result};
use crate::nets::{Classifier, ClassifierConfig};
use crate::phantom::{Dataset, Split, SubjectRecord};
use crate::training::{accuracy, class_recall, train_classifier, ClassifierTrainConfig, Labeled};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PosthocConfig {
    pub seeds: Vec<u64>,
    pub classifier: ClassifierTrainConfig,
    pub classifier_width: usize,
    pub classifier_hidden: [usize; 2],
    pub segmenter: SegmenterConfig,
    pub traditional: TraditionalConfig,
}

impl Default for PosthocConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2],
            classifier: ClassifierTrainConfig {
                epochs: 15,
                lr: 1e-3,
                augment: true,
                ..ClassifierTrainConfig::default()
            },
            classifier_width: 8,
            classifier_hidden: [64, 32],
            segmenter: SegmenterConfig::default(),
            traditional: TraditionalConfig::default(),
        }
    }
}

/// Mean and sample standard deviation of per-seed values.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub values: Vec<Real>,
    pub mean: Real,
    pub std: Real,
}

impl Summary {
    pub fn of(values: Vec<Real>) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<Real>() / n.max(1) as Real;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / (n - 1) as Real).sqrt()
        } else {
            0.0
        };
        Self { values, mean, std }
    }

    pub fn median(&self) -> Real {
        let mut v = self.values.clone();
        v.sort_by(Real::total_cmp);
        match v.len() {
            0 => Real::NAN,
            n if n % 2 == 1 => v[n / 2],
            n => (v[n / 2 - 1] + v[n / 2]) / 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationEval {
    pub accuracy: Summary,
    /// Test recall per class, one summary each; classes absent from the
    /// test split are `None`.
    pub class_recall: Vec<Option<Summary>>,
}

fn labeled(rs: &[&SubjectRecord]) -> Vec<Labeled> {
    rs.iter().map(|r| Labeled::from_record(r)).collect()
}

/// Train one classifier per seed on the train split (with traditional
/// augmentation when enabled) and score it on the test split.
pub fn eval_posthoc_classification(data: &Dataset, cfg: &PosthocConfig) -> Result<ClassificationEval> {
    let train = labeled(&data.split_records(Split::Train));
    let val = labeled(&data.split_records(Split::Val));
    let test = labeled(&data.split_records(Split::Test));
    if test.is_empty() {
        return Err(DaaError::InsufficientSubjects("test split is empty".into()));
    }
    let (h, w) = (test[0].image.dim(2), test[0].image.dim(3));
    let classes = data.num_classes();
    let mut acc = Vec::new();
    let mut recall: Vec<Vec<Real>> = vec![Vec::new(); classes];
    let mut present = vec![false; classes];
    for &seed in &cfg.seeds {
        let mut f = Classifier::new(
            ClassifierConfig {
                base_width: cfg.classifier_width,
                fc_hidden: cfg.classifier_hidden,
                ..ClassifierConfig::new(h, w, classes)
            },
            seed,
        )?;
        let tc = ClassifierTrainConfig {
            seed,
            ..cfg.classifier.clone()
        };
        let v = (!val.is_empty()).then_some(val.as_slice());
        train_classifier(&mut f, &train, v, &tc, &cfg.traditional)?;
        acc.push(accuracy(&f, &test)?);
        for (c, r) in class_recall(&f, &test, classes)?.into_iter().enumerate() {
            if let Some(r) = r {
                present[c] = true;
                recall[c].push(r);
            }
        }
    }
    Ok(ClassificationEval {
        accuracy: Summary::of(acc),
        class_recall: recall
            .into_iter()
            .zip(present)
            .map(|(v, p)| p.then(|| Summary::of(v)))
            .collect(),
    })
}

/// Train one segmenter per seed on the train split's structure masks
/// (near-GT masks for synthetic records) and report test Dice.
pub fn eval_posthoc_segmentation(data: &Dataset, cfg: &PosthocConfig) -> Result<Summary> {
    let train = data.split_records(Split::Train);
    let test = data.split_records(Split::Test);
    if test.is_empty() {
        return Err(DaaError::InsufficientSubjects("test split is empty".into()));
    }
    if let Some(r) = train.iter().find(|r| r.masks.is_empty()) {
        return Err(DaaError::InvalidInput(format!("subject {} has no structure masks", r.id)));
    }
    let mut out = Vec::new();
    for &seed in &cfg.seeds {
        let seg = train_segmenter(&train, &cfg.segmenter, &cfg.traditional, seed)?;
        out.push(mean_dice(&seg, &test));
    }
    Ok(Summary::of(out))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub experiment: String,
    pub seed: u64,
    pub metric: String,
    pub value: Real,
}

/// Rows of `experiment,seed,metric,value`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    pub const HEADER: &'static str = "experiment,seed,metric,value";

    pub fn push(&mut self, experiment: &str, seed: u64, metric: &str, value: Real) {
        self.rows.push(ReportRow {
            experiment: experiment.into(),
            seed,
            metric: metric.into(),
            value,
        });
    }

    /// One row per seed of a summary.
    pub fn push_summary(&mut self, experiment: &str, seeds: &[u64], metric: &str, s: &Summary) {
        for (&seed, &v) in seeds.iter().zip(&s.values) {
            self.push(experiment, seed, metric, v);
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", r.experiment, r.seed, r.metric, r.value);
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| DaaError::io(path, e))
    }
}
