use std::path::PathBuf;

use thiserror::Error;

use crate::factors::PlanViolation;

#[derive(Debug, Error)]
pub enum DaaError {
    #[error("factor channel {channel:?} is empty")]
    EmptyFactor { channel: Option<usize> },

    #[error("unknown subject `{0}`")]
    UnknownSubject(String),

    #[error("invalid arithmetic plan: {}", format_violations(.0))]
    InvalidPlan(Vec<PlanViolation>),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("phantom spec infeasible: {0}")]
    SpecInfeasible(String),

    #[error("segmentation masks overlap at {count} pixels")]
    OverlapError { count: usize },

    #[error("format error at byte {offset}: {message}")]
    FormatError { offset: u64, message: String },

    #[error("insufficient subjects: {0}")]
    InsufficientSubjects(String),

    #[error("no compatible base/donor pairs: {0}")]
    NoCompatiblePairs(String),

    #[error("only {found} candidates match the target, {wanted} requested")]
    InsufficientCandidates { wanted: usize, found: usize },

    #[error("non-finite loss at step {step}: {diagnostics}")]
    NonFiniteLoss { step: u64, diagnostics: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn format_violations(v: &[PlanViolation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

impl DaaError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(offset: u64, message: impl Into<String>) -> Self {
        Self::FormatError {
            offset,
            message: message.into(),
        }
    }
}

pub type Result<T, E = DaaError> = std::result::Result<T, E>;
