//! JSON API consumed by the annotation UI.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tower_http::services::ServeDir;
use winoforge_core::schema::ValidityLabel;

use crate::service::{Service, ServiceError};
use crate::state::AnnotateError;

#[derive(Debug, Deserialize)]
pub struct NextQuery {
    pub annotator: String,
}

#[derive(Debug, Deserialize)]
pub struct VerdictBody {
    pub annotator_id: String,
    pub instance_id: String,
    pub label: ValidityLabel,
}

pub struct ApiError(ServiceError);

impl<E: Into<ServiceError>> From<E> for ApiError {
    fn from(e: E) -> Self {
        ApiError(e.into())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code) = match &self.0 {
            ServiceError::Annotate(AnnotateError::UnknownAnnotator(_)) => (StatusCode::FORBIDDEN, "unknown_annotator"),
            ServiceError::Annotate(AnnotateError::UnknownInstance(_)) => (StatusCode::NOT_FOUND, "unknown_instance"),
            ServiceError::Journal(_) => (StatusCode::INTERNAL_SERVER_ERROR, "journal_write_failed"),
        };
        (status, Json(json!({ "error": code, "message": self.0.to_string() }))).into_response()
    }
}

async fn next(State(svc): State<Arc<Service>>, Query(q): Query<NextQuery>) -> Result<Response, ApiError> {
    let now = svc.now();
    let next = svc.write(|s| s.next_unlabeled(&q.annotator, now))?;
    Ok(Json(next).into_response())
}

async fn submit(State(svc): State<Arc<Service>>, Json(body): Json<VerdictBody>) -> Result<Response, ApiError> {
    let ack = svc.submit(&body.annotator_id, &body.instance_id, body.label)?;
    Ok(Json(ack).into_response())
}

async fn progress(State(svc): State<Arc<Service>>) -> Response {
    Json(svc.read(|s| s.progress())).into_response()
}

async fn agreement(State(svc): State<Arc<Service>>) -> Response {
    Json(svc.read(|s| s.agreement())).into_response()
}

async fn filter_report(State(svc): State<Arc<Service>>) -> Response {
    Json(svc.read(|s| s.filter_view())).into_response()
}

const PLACEHOLDER: &str = "<!doctype html><title>winoforge annotate</title>\
<p>No UI bundle configured. The JSON API lives under <code>/api/</code>.</p>";

/// API routes plus static files from `ui_dir` (or a placeholder page).
pub fn router(svc: Arc<Service>, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/instances/next", get(next))
        .route("/api/verdicts", post(submit))
        .route("/api/progress", get(progress))
        .route("/api/agreement", get(agreement))
        .route("/api/filter-report", get(filter_report))
        .with_state(svc);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(|| async { Html(PLACEHOLDER) })),
    }
}

pub async fn serve(svc: Arc<Service>, addr: SocketAddr, ui_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "annotation service listening");
    axum::serve(listener, router(svc, ui_dir)).await
}
