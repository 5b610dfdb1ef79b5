//! HTTP endpoints for the review frontend.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use emoforge_core::review::{Decision, ReviewStore};
use emoforge_core::Error;
use serde::{Deserialize, Serialize};

pub const DEFAULT_QUEUE_LIMIT: usize = 20;

#[derive(Debug, Deserialize)]
pub struct QueueParams {
    pub limit: Option<usize>,
}

/// Body of `POST /decision`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionRequest {
    pub id: String,
    pub decision: Decision,
    pub reviewer: String,
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    status: Option<String>,
}

struct ApiError(StatusCode, ErrorBody);

impl ApiError {
    fn bad_request(msg: impl Into<String>) -> Self {
        Self(StatusCode::BAD_REQUEST, ErrorBody { error: msg.into(), status: None })
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::NotFound(_) => Self(StatusCode::NOT_FOUND, ErrorBody { error: msg, status: None }),
            Error::Conflict { status, .. } => Self(StatusCode::CONFLICT, ErrorBody { error: msg, status: Some(status) }),
            Error::Validation(_) | Error::Shape(_) => Self::bad_request(msg),
            _ => Self(StatusCode::INTERNAL_SERVER_ERROR, ErrorBody { error: msg, status: None }),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

type Store = Arc<ReviewStore>;

async fn queue(State(store): State<Store>, params: Result<Query<QueueParams>, axum::extract::rejection::QueryRejection>) -> Response {
    match params {
        Ok(Query(p)) => Json(store.queue(p.limit.unwrap_or(DEFAULT_QUEUE_LIMIT))).into_response(),
        Err(e) => ApiError::bad_request(e.body_text()).into_response(),
    }
}

async fn pair(State(store): State<Store>, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(Json(store.item(&id)?).into_response())
}

async fn decision(State(store): State<Store>, body: Bytes) -> Result<Response, ApiError> {
    let req: DecisionRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("malformed decision: {e}")))?;
    if req.id.trim().is_empty() || req.reviewer.trim().is_empty() {
        return Err(ApiError::bad_request("id and reviewer must be non-empty"));
    }
    let item = store.decide(&req.id, req.decision, &req.reviewer)?;
    tracing::info!(id = %req.id, decision = ?req.decision, reviewer = %req.reviewer, "review decision");
    Ok(Json(item).into_response())
}

async fn image(State(store): State<Store>, Path(file): Path<String>) -> Result<Response, ApiError> {
    let not_found = || ApiError(StatusCode::NOT_FOUND, ErrorBody { error: format!("image {file} not found"), status: None });
    let path = store.image_path(&file).ok_or_else(not_found)?;
    let bytes = tokio::fs::read(&path).await.map_err(|_| not_found())?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

pub fn router(store: Arc<ReviewStore>) -> Router {
    Router::new()
        .route("/queue", get(queue))
        .route("/pair/{id}", get(pair))
        .route("/decision", post(decision))
        .route("/images/{file}", get(image))
        .with_state(store)
}

pub async fn serve(store: Arc<ReviewStore>, addr: std::net::SocketAddr) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("review service listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(store)).await?;
    Ok(())
}
