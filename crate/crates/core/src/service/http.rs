use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use tokio::sync::Semaphore;

use super::api::{ApiError, GenerateRequest, ServiceState, TraverseOutcome, TraverseRequest};
use crate::error::{DaaError, Result};
use crate::factors::SubjectId;

#[derive(Clone)]
struct App {
    state: Arc<ServiceState>,
    workers: Arc<Semaphore>,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

fn ok<T: Serialize>(v: T) -> Response {
    Json(v).into_response()
}

fn bad_body(e: JsonRejection) -> ApiError {
    ApiError::new(422, "invalid_body", e.body_text())
}

/// Run a CPU-bound handler on the blocking pool, at most `workers` at once.
async fn job<T: Send + 'static>(app: &App, f: impl FnOnce(&ServiceState) -> T + Send + 'static) -> std::result::Result<T, ApiError> {
    let _permit = app
        .workers
        .clone()
        .acquire_owned()
        .await
        .map_err(|_| ApiError::new(503, "shutting_down", "worker pool closed"))?;
    let state = app.state.clone();
    tokio::task::spawn_blocking(move || f(&state))
        .await
        .map_err(|e| ApiError::new(500, "internal", format!("worker failed: {e}")))
}

async fn health(State(app): State<App>) -> Response {
    ok(app.state.health())
}

async fn subjects(State(app): State<App>) -> Response {
    match job(&app, |s| s.list_subjects()).await {
        Ok(Ok(v)) => ok(v),
        Ok(Err(e)) | Err(e) => e.into_response(),
    }
}

async fn subject(State(app): State<App>, Path(id): Path<String>) -> Response {
    match job(&app, move |s| s.subject(&SubjectId::new(id))).await {
        Ok(Ok(v)) => ok(v),
        Ok(Err(e)) | Err(e) => e.into_response(),
    }
}

async fn generate(State(app): State<App>, body: std::result::Result<Json<GenerateRequest>, JsonRejection>) -> Response {
    let req = match body {
        Ok(Json(r)) => r,
        Err(e) => return bad_body(e).into_response(),
    };
    match job(&app, move |s| s.generate(&req)).await {
        Ok(Ok(v)) => ok(v),
        Ok(Err(e)) | Err(e) => e.into_response(),
    }
}

async fn traverse(State(app): State<App>, body: std::result::Result<Json<TraverseRequest>, JsonRejection>) -> Response {
    let req = match body {
        Ok(Json(r)) => r,
        Err(e) => return bad_body(e).into_response(),
    };
    match job(&app, move |s| s.traverse(&req)).await {
        Ok(Ok(TraverseOutcome::Complete(v))) => ok(v),
        Ok(Ok(TraverseOutcome::Partial(p))) => (StatusCode::UNPROCESSABLE_ENTITY, Json(p)).into_response(),
        Ok(Err(e)) | Err(e) => e.into_response(),
    }
}

async fn not_found() -> Response {
    ApiError::new(404, "not_found", "no such endpoint").into_response()
}

/// Routes over read-only state; `workers` bounds concurrent generation jobs.
pub fn router(state: Arc<ServiceState>, workers: usize) -> Router {
    let app = App {
        state,
        workers: Arc::new(Semaphore::new(workers.max(1))),
    };
    Router::new()
        .route("/health", get(health))
        .route("/subjects", get(subjects))
        .route("/subjects/{id}", get(subject))
        .route("/generate", post(generate))
        .route("/traverse", post(traverse))
        .fallback(not_found)
        .with_state(app)
}

/// Bind and serve until the process ends.
pub async fn serve(addr: SocketAddr, state: Arc<ServiceState>, workers: usize) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| DaaError::io(addr.to_string(), e))?;
    tracing::info!("listening on {}", addr);
    axum::serve(listener, router(state, workers))
        .await
        .map_err(|e| DaaError::io(addr.to_string(), e))
}
