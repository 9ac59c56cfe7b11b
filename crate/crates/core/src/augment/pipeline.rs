//! Candidate synthesis, confidence filtering, near-ground-truth mask
//! extraction and dataset extension.

use std::collections::BTreeSet;

use daa_autograd::{Real, Tensor};
use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use crate::error::{DaaError, Result};
use crate::factors::{plan_target, validate_plan, AnatomyTensor, ArithmeticPlan, Mask, SubjectId};
use crate::model::ModelBundle;
use crate::nets::init::rng;
use crate::nets::ImagingFactor;
use crate::phantom::{Dataset, DatasetManifest, Split, SubjectEntry, SubjectRecord};
use crate::training::{compatible, PlanPolicy};

pub const DEFAULT_POOL_MULTIPLIER: usize = 4;
pub const MASK_THRESHOLD: Real = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum AugmentTarget {
    /// Pathological donors of this class into normal bases.
    Class(usize),
    /// Bases of this vendor receiving factors from other vendors.
    Vendor(u8),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationRequest {
    pub target: AugmentTarget,
    /// Samples kept after filtering.
    pub count: usize,
    /// Candidates synthesized per kept sample.
    pub pool_multiplier: usize,
    pub policy: PlanPolicy,
    pub seed: u64,
}

impl AugmentationRequest {
    pub fn new(target: AugmentTarget, count: usize, seed: u64) -> Self {
        Self {
            target,
            count,
            pool_multiplier: DEFAULT_POOL_MULTIPLIER,
            policy: PlanPolicy::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(DaaError::InvalidInput("augmentation count must be at least 1".into()));
        }
        if self.pool_multiplier == 0 {
            return Err(DaaError::InvalidInput("pool multiplier must be at least 1".into()));
        }
        Ok(())
    }

    pub fn pool_size(&self) -> usize {
        self.count * self.pool_multiplier
    }
}

/// One synthesized subject.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedSample {
    pub id: SubjectId,
    /// `[1, 1, H, W]`.
    pub image: Tensor,
    pub c_tilde: AnatomyTensor,
    /// Binarized heart channels.
    pub masks: Vec<Mask>,
    /// Class the plan is meant to show.
    pub label: usize,
    pub predicted: usize,
    pub confidence: Real,
    pub plan: ArithmeticPlan,
    pub imaging: ImagingFactor,
    pub vendor: u8,
}

#[derive(Serialize)]
struct Provenance<'a> {
    base: &'a SubjectId,
    plan: &'a ArithmeticPlan,
}

impl GeneratedSample {
    pub fn provenance(&self) -> String {
        serde_json::to_string(&Provenance {
            base: &self.plan.base_subject,
            plan: &self.plan,
        })
        .expect("plan serializes")
    }

    /// DAAF record flagged synthetic; heart channels hold the near-GT masks.
    pub fn to_record(&self, class_names: &[String]) -> Result<SubjectRecord> {
        let mut anatomy = self.c_tilde.binarized();
        for (k, m) in anatomy.heart_channels().collect::<Vec<_>>().into_iter().zip(&self.masks) {
            anatomy.set_channel(k, m);
        }
        let name = class_names
            .get(self.label)
            .ok_or_else(|| DaaError::InvalidInput(format!("label {} has no class name", self.label)))?;
        anatomy.subject_id = self.id.clone();
        anatomy.pathology = crate::factors::PathologyLabel::new(self.label, name.clone());
        Ok(SubjectRecord {
            id: self.id.clone(),
            image: self.image.map(|v| v as f32 as Real),
            masks: self.masks.clone(),
            pathology: anatomy.pathology.clone(),
            anatomy,
            imaging: ImagingFactor {
                code: self.imaging.code.clone(),
                source_subject: Some(self.id.clone()),
            },
            vendor: self.vendor,
            synthetic: true,
            provenance: Some(self.provenance()),
        })
    }
}

/// Threshold the heart channels at 0.5; a pixel above threshold in several
/// channels goes to the largest value (lowest index on ties).
pub fn extract_near_gt_masks(c: &AnatomyTensor) -> Vec<Mask> {
    let heart: Vec<usize> = c.heart_channels().collect();
    let (h, w) = c.dims();
    let mut out = vec![Mask::new(h, w); heart.len()];
    for p in 0..h * w {
        let mut best: Option<(usize, Real)> = None;
        for (i, &k) in heart.iter().enumerate() {
            let v = c.channel_values(k)[p];
            if v >= MASK_THRESHOLD && best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        if let Some((i, _)) = best {
            out[i].set(p / w, p % w, true);
        }
    }
    out
}

fn pairs_for<'a>(
    data: &'a Dataset,
    target: AugmentTarget,
) -> Result<(Vec<&'a SubjectRecord>, Vec<&'a SubjectRecord>)> {
    let train = data.split_records(Split::Train);
    let real: Vec<&SubjectRecord> = train.into_iter().filter(|r| !r.synthetic).collect();
    let (donors, bases): (Vec<_>, Vec<_>) = match target {
        AugmentTarget::Class(c) => (
            real.iter().copied().filter(|r| r.pathology.class_index == c).collect(),
            real.iter().copied().filter(|r| r.pathology.is_normal()).collect(),
        ),
        AugmentTarget::Vendor(v) => (
            real.iter().copied().filter(|r| r.vendor != v).collect(),
            real.iter().copied().filter(|r| r.vendor == v).collect(),
        ),
    };
    if donors.is_empty() || bases.is_empty() {
        return Err(DaaError::NoCompatiblePairs(format!(
            "target {target:?}: {} donors, {} bases in the train split",
            donors.len(),
            bases.len()
        )));
    }
    Ok((donors, bases))
}

/// Draw `count * pool_multiplier` validated plans and run them through the
/// model. Deterministic in `request.seed`.
pub fn synthesize_candidates(model: &ModelBundle, data: &Dataset, request: &AugmentationRequest) -> Result<Vec<GeneratedSample>> {
    request.validate()?;
    let (donors, bases) = pairs_for(data, request.target)?;
    let mut r = rng(request.seed);
    let tag = match request.target {
        AugmentTarget::Class(c) => format!("c{c}"),
        AugmentTarget::Vendor(v) => format!("v{v}"),
    };
    let mut out = Vec::with_capacity(request.pool_size());
    for i in 0..request.pool_size() {
        let donor = *donors.choose(&mut r).expect("non-empty");
        let options: Vec<&SubjectRecord> = bases
            .iter()
            .copied()
            .filter(|b| b.id != donor.id && compatible(b.pathology.class_index, donor.pathology.class_index))
            .collect();
        let base = *options.choose(&mut r).ok_or_else(|| {
            DaaError::NoCompatiblePairs(format!("no base for donor {} under target {:?}", donor.id, request.target))
        })?;
        let plan = request.policy.plan(base, donor)?;
        validate_plan(&plan, data).map_err(DaaError::InvalidPlan)?;
        let label = plan_target(&plan, data)?.class_index;
        let s = model.synthesize(data, &plan, &base.imaging, request.seed.wrapping_mul(1_000_003).wrapping_add(i as u64))?;
        let (predicted, confidence) = s.predicted();
        out.push(GeneratedSample {
            id: SubjectId::new(format!("syn-{tag}-s{}-{i:04}", request.seed)),
            image: s.image,
            masks: extract_near_gt_masks(&s.c_tilde),
            c_tilde: s.c_tilde,
            label,
            predicted,
            confidence,
            plan,
            imaging: base.imaging.clone(),
            vendor: base.vendor,
        });
    }
    Ok(out)
}

/// Keep the `request.count` most confident samples whose prediction equals
/// their label, most confident first; ties keep input order.
pub fn filter_by_confidence(samples: &[GeneratedSample], request: &AugmentationRequest) -> Result<Vec<GeneratedSample>> {
    request.validate()?;
    let mut hits: Vec<&GeneratedSample> = samples.iter().filter(|s| s.predicted == s.label).collect();
    if hits.len() < request.count {
        return Err(DaaError::InsufficientCandidates {
            wanted: request.count,
            found: hits.len(),
        });
    }
    hits.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    Ok(hits.into_iter().take(request.count).cloned().collect())
}

/// Samples needed to lift `target` to the largest other class in the
/// train split.
pub fn balancing_count(m: &DatasetManifest, target: AugmentTarget) -> usize {
    let (mine, top) = match target {
        AugmentTarget::Class(c) => {
            let counts: Vec<usize> = m
                .class_names
                .iter()
                .map(|n| m.class_counts.get(n).map_or(0, |s| s.train))
                .collect();
            (counts.get(c).copied().unwrap_or(0), counts.into_iter().max().unwrap_or(0))
        }
        AugmentTarget::Vendor(v) => (
            m.vendor_counts.get(&v).map_or(0, |s| s.train),
            m.vendor_counts.values().map(|s| s.train).max().unwrap_or(0),
        ),
    };
    top.saturating_sub(mine)
}

/// Add samples to the train split. Val, test and existing entries are
/// left as they are.
pub fn augment_manifest(base: &DatasetManifest, samples: &[GeneratedSample]) -> Result<DatasetManifest> {
    let mut m = base.clone();
    let mut fresh = BTreeSet::new();
    for s in samples {
        if m.subjects.contains_key(&s.id) || !fresh.insert(&s.id) {
            return Err(DaaError::InvalidInput(format!("duplicate subject id {}", s.id)));
        }
        if s.label >= m.num_classes() {
            return Err(DaaError::InvalidInput(format!("sample {} has label {} out of range", s.id, s.label)));
        }
    }
    if samples.is_empty() {
        return Ok(m);
    }
    for s in samples {
        m.train.push(s.id.clone());
        m.subjects.insert(
            s.id.clone(),
            SubjectEntry {
                label: s.label,
                vendor: s.vendor,
                synthetic: true,
                provenance: Some(s.provenance()),
            },
        );
    }
    m.recount();
    Ok(m)
}

/// As [`augment_manifest`], also adding the synthetic records.
pub fn augment_dataset(base: &Dataset, samples: &[GeneratedSample]) -> Result<Dataset> {
    let manifest = augment_manifest(&base.manifest, samples)?;
    let mut records: Vec<SubjectRecord> = base.records.values().cloned().collect();
    for s in samples {
        records.push(s.to_record(&base.manifest.class_names)?);
    }
    Dataset::new(manifest, records)
}
