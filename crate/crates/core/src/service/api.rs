//! Request and response bodies of the HTTP API and the handlers behind
//! them, independent of the web framework.

use daa_autograd::{Real, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::DaaError;
use crate::factors::{validate_plan, ArithmeticPlan, FactorOp, MorphOp, PlanViolation, SubjectId};
use crate::imageio::{base64_png, image_png, unit_png};
use crate::model::{ModelBundle, Synthesis};
use crate::nets::ImagingFactor;
use crate::phantom::{Dataset, Split, SubjectRecord};

/// Loaded state. Handlers only read it.
#[derive(Clone, Debug, Default)]
pub struct ServiceState {
    pub dataset: Option<Dataset>,
    pub model: Option<ModelBundle>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<PlanViolation>,
}

impl ApiError {
    pub fn new(status: u16, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            code: code.into(),
            message: message.into(),
            violations: Vec::new(),
        }
    }

    fn no_dataset() -> Self {
        Self::new(503, "dataset_not_loaded", "no dataset is loaded")
    }

    fn no_model() -> Self {
        Self::new(503, "model_not_loaded", "no model is loaded")
    }

    fn unknown(id: &SubjectId) -> Self {
        Self::new(404, "unknown_subject", format!("unknown subject `{id}`"))
    }
}

impl From<DaaError> for ApiError {
    fn from(e: DaaError) -> Self {
        match e {
            DaaError::UnknownSubject(id) => Self::new(404, "unknown_subject", format!("unknown subject `{id}`")),
            DaaError::InvalidPlan(v) => Self {
                violations: v,
                ..Self::new(422, "invalid_plan", "the plan violates the arithmetic rules")
            },
            DaaError::EmptyFactor { .. } => Self::new(422, "empty_factor", e.to_string()),
            DaaError::InvalidInput(_) | DaaError::ShapeMismatch(_) => Self::new(422, "invalid_input", e.to_string()),
            other => Self::new(500, "internal", other.to_string()),
        }
    }
}

pub type ApiResult<T> = std::result::Result<T, ApiError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub dataset_loaded: bool,
    pub model_loaded: bool,
    pub subjects: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectSummary {
    pub id: SubjectId,
    pub label: usize,
    pub pathology: String,
    pub vendor: u8,
    pub split: Option<Split>,
    pub synthetic: bool,
    /// Base64 PNG of the image.
    pub thumbnail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectDetail {
    #[serde(flatten)]
    pub summary: SubjectSummary,
    pub height: usize,
    pub width: usize,
    /// One base64 PNG per anatomy channel.
    pub channels: Vec<String>,
    pub heart_channels: Vec<usize>,
    pub imaging_code: Vec<Real>,
    pub provenance: Option<String>,
}

/// Appearance source for generation: another subject's imaging factor or
/// an explicit code.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ImagingSource {
    Subject { subject: SubjectId },
    Code { code: Vec<Real> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub base_subject: SubjectId,
    #[serde(default)]
    pub ops: Vec<FactorOp>,
    /// Defaults to the base subject.
    #[serde(default)]
    pub imaging_source: Option<ImagingSource>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: usize,
    pub pathology: String,
    pub confidence: Real,
    pub probabilities: Vec<Real>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub image: String,
    /// Refined anatomy, one PNG per channel.
    pub channels: Vec<String>,
    /// `|Ĩ − I_base| / 2`, in `[0, 1]`.
    pub difference: String,
    pub difference_mean: Real,
    pub target_label: usize,
    pub prediction: Prediction,
}

fn default_steps() -> Vec<usize> {
    vec![3, 6, 9]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraverseRequest {
    pub subject: SubjectId,
    pub channel: usize,
    pub op: MorphOp,
    #[serde(default = "default_steps")]
    pub steps: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraverseEntry {
    pub step: usize,
    /// The edited channel.
    pub factor: String,
    pub factor_area: usize,
    pub image: String,
    /// Against the subject's own image.
    pub difference: String,
    pub difference_mean: Real,
    pub prediction: Prediction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraverseResponse {
    pub entries: Vec<TraverseEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Body of a traversal cut short by an emptied factor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraversePartial {
    pub code: String,
    pub message: String,
    pub warning: String,
    pub entries: Vec<TraverseEntry>,
}

pub enum TraverseOutcome {
    Complete(TraverseResponse),
    /// Served with status 422.
    Partial(TraversePartial),
}

fn png(values: &[Real], h: usize, w: usize, unit: bool) -> ApiResult<String> {
    let bytes = if unit { unit_png(values, h, w) } else { image_png(values, h, w) }?;
    Ok(base64_png(&bytes))
}

fn split_of(d: &Dataset, id: &SubjectId) -> Option<Split> {
    [Split::Train, Split::Val, Split::Test]
        .into_iter()
        .find(|&s| d.manifest.split(s).contains(id))
}

fn summary(d: &Dataset, r: &SubjectRecord) -> ApiResult<SubjectSummary> {
    Ok(SubjectSummary {
        id: r.id.clone(),
        label: r.pathology.class_index,
        pathology: r.pathology.class_name.clone(),
        vendor: r.vendor,
        split: split_of(d, &r.id),
        synthetic: r.synthetic,
        thumbnail: png(r.image.data(), r.height(), r.width(), false)?,
    })
}

/// `|a − b| / 2` for images in `[-1, 1]`.
pub fn difference_map(a: &Tensor, b: &Tensor) -> Vec<Real> {
    a.data().iter().zip(b.data()).map(|(x, y)| ((x - y).abs() / 2.0).min(1.0)).collect()
}

impl ServiceState {
    fn dataset(&self) -> ApiResult<&Dataset> {
        self.dataset.as_ref().ok_or_else(ApiError::no_dataset)
    }

    fn model(&self) -> ApiResult<&ModelBundle> {
        self.model.as_ref().ok_or_else(ApiError::no_model)
    }

    fn record(&self, id: &SubjectId) -> ApiResult<&SubjectRecord> {
        self.dataset()?.get(id).ok_or_else(|| ApiError::unknown(id))
    }

    fn class_name(&self, label: usize) -> String {
        self.dataset
            .as_ref()
            .and_then(|d| d.manifest.class_names.get(label).cloned())
            .unwrap_or_else(|| label.to_string())
    }

    fn prediction(&self, s: &Synthesis) -> Prediction {
        let (label, confidence) = s.predicted();
        Prediction {
            label,
            pathology: self.class_name(label),
            confidence,
            probabilities: s.probs.clone(),
        }
    }

    pub fn health(&self) -> Health {
        Health {
            status: "ok".into(),
            dataset_loaded: self.dataset.is_some(),
            model_loaded: self.model.is_some(),
            subjects: self.dataset.as_ref().map_or(0, |d| d.records.len()),
        }
    }

    /// Every subject, ordered by id.
    pub fn list_subjects(&self) -> ApiResult<Vec<SubjectSummary>> {
        let d = self.dataset()?;
        d.records.values().map(|r| summary(d, r)).collect()
    }

    pub fn subject(&self, id: &SubjectId) -> ApiResult<SubjectDetail> {
        let d = self.dataset()?;
        let r = self.record(id)?;
        let (h, w) = (r.height(), r.width());
        let channels = (0..r.anatomy.num_channels())
            .map(|k| png(r.anatomy.channel_values(k), h, w, true))
            .collect::<ApiResult<_>>()?;
        Ok(SubjectDetail {
            summary: summary(d, r)?,
            height: h,
            width: w,
            channels,
            heart_channels: r.anatomy.heart_channels().collect(),
            imaging_code: r.imaging.code.clone(),
            provenance: r.provenance.clone(),
        })
    }

    pub fn generate(&self, req: &GenerateRequest) -> ApiResult<GenerateResponse> {
        let model = self.model()?;
        let d = self.dataset()?;
        let base = self.record(&req.base_subject)?;
        for op in &req.ops {
            if let Some(donor) = &op.donor_subject {
                self.record(donor)?;
            }
        }
        let z = match &req.imaging_source {
            None => base.imaging.clone(),
            Some(ImagingSource::Subject { subject }) => self.record(subject)?.imaging.clone(),
            Some(ImagingSource::Code { code }) => ImagingFactor::new(code.clone(), None)?,
        };
        let plan = ArithmeticPlan {
            base_subject: req.base_subject.clone(),
            ops: req.ops.clone(),
        };
        validate_plan(&plan, d).map_err(DaaError::InvalidPlan)?;
        let target = crate::factors::plan_target(&plan, d)?.class_index;
        let s = model.synthesize(d, &plan, &z, req.seed)?;
        let (h, w) = (base.height(), base.width());
        let diff = difference_map(&s.image, &base.image);
        Ok(GenerateResponse {
            image: png(s.image.data(), h, w, false)?,
            channels: (0..s.c_tilde.num_channels())
                .map(|k| png(s.c_tilde.channel_values(k), h, w, true))
                .collect::<ApiResult<_>>()?,
            difference: png(&diff, h, w, true)?,
            difference_mean: diff.iter().sum::<Real>() / diff.len() as Real,
            target_label: target,
            prediction: self.prediction(&s),
        })
    }

    pub fn traverse(&self, req: &TraverseRequest) -> ApiResult<TraverseOutcome> {
        let run = || -> ApiResult<(TraverseResponse, Option<usize>)> {
            let model = self.model()?;
            let r = self.record(&req.subject)?;
            if req.channel >= r.anatomy.num_channels() {
                return Err(ApiError::new(
                    422,
                    "invalid_input",
                    format!("channel {} out of range for {} channels", req.channel, r.anatomy.num_channels()),
                ));
            }
            let t = model.traverse(&r.anatomy, &r.imaging, req.channel, req.op, &req.steps, req.seed)?;
            let (h, w) = (r.height(), r.width());
            let mut entries = Vec::with_capacity(t.steps.len());
            for st in &t.steps {
                let diff = difference_map(&st.synthesis.image, &r.image);
                entries.push(TraverseEntry {
                    step: st.step,
                    factor: png(&st.factor.to_reals(), h, w, true)?,
                    factor_area: st.factor.count(),
                    image: png(st.synthesis.image.data(), h, w, false)?,
                    difference: png(&diff, h, w, true)?,
                    difference_mean: diff.iter().sum::<Real>() / diff.len() as Real,
                    prediction: self.prediction(&st.synthesis),
                });
            }
            let warning = t
                .emptied_at
                .map(|s| format!("erosion by {s} empties channel {}; later steps skipped", req.channel));
            Ok((TraverseResponse { entries, warning }, t.emptied_at))
        };
        Ok(match run()? {
            (resp, None) => TraverseOutcome::Complete(resp),
            (resp, Some(step)) => TraverseOutcome::Partial(TraversePartial {
                code: "empty_factor".into(),
                message: format!("channel {} is empty after erosion step {step}", req.channel),
                warning: resp.warning.unwrap_or_default(),
                entries: resp.entries,
            }),
        })
    }
}
