//! HTTP service over a loaded dataset and model.

pub mod api;
mod http;

pub use api::{
    difference_map, ApiError, ApiResult, GenerateRequest, GenerateResponse, Health, ImagingSource, Prediction, ServiceState,
    SubjectDetail, SubjectSummary, TraverseEntry, TraverseOutcome, TraversePartial, TraverseRequest, TraverseResponse,
};
pub use http::{router, serve};
