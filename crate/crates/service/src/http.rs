//! HTTP routes over [`Triage`].

use std::sync::Arc;

use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;

use nailguard::explain::AttributionMethod;

use crate::error::{Result, ServiceError};
use crate::store::{CaseId, Status};
use crate::triage::{ReviewRequest, Triage};

pub const TOKEN_ENV: &str = "NAILGUARD_TOKEN";
const MAX_UPLOAD: usize = 32 * 1024 * 1024;

#[derive(Clone)]
struct AppState {
    triage: Arc<Triage>,
    token: Option<Arc<str>>,
}

/// Builds the router. With a token every route except `/health` requires
/// `Authorization: Bearer <token>`.
pub fn router(triage: Arc<Triage>, token: Option<String>) -> Router {
    let state = AppState { triage, token: token.filter(|t| !t.is_empty()).map(Arc::from) };
    let protected = Router::new()
        .route("/cases", post(submit).get(list))
        .route("/cases/{id}", get(case))
        .route("/cases/{id}/explanation", get(explanation))
        .route("/cases/{id}/review", post(review))
        .route("/models", get(models))
        .route("/models/{id}/activate", post(activate))
        .route_layer(middleware::from_fn_with_state(state.clone(), auth));
    Router::new()
        .route("/health", get(health))
        .merge(protected)
        .layer(DefaultBodyLimit::max(MAX_UPLOAD))
        .with_state(state)
}

/// Reads the bearer token from `NAILGUARD_TOKEN`; unset means open.
pub fn token_from_env() -> Option<String> {
    std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty())
}

async fn auth(State(state): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(token) = &state.token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t == &**token);
        if !ok {
            return ServiceError::Unauthorized.into_response();
        }
    }
    next.run(req).await
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T> + Send + 'static) -> Result<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ServiceError::Conflict(format!("worker failed: {e}")))?
}

async fn health(State(state): State<AppState>) -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok", "active_model": state.triage.active_model() }))
}

async fn submit(State(state): State<AppState>, mut multipart: Multipart) -> Result<Response> {
    let mut bytes = None;
    while let Some(field) =
        multipart.next_field().await.map_err(|e| ServiceError::Validation(format!("malformed multipart body: {e}")))?
    {
        let is_image = field.name() == Some("image") || field.file_name().is_some();
        if is_image {
            let data = field.bytes().await.map_err(|e| ServiceError::Validation(format!("unreadable upload: {e}")))?;
            bytes = Some(data.to_vec());
            break;
        }
    }
    let bytes = bytes.ok_or_else(|| ServiceError::Validation("multipart field `image` is required".into()))?;
    let triage = state.triage.clone();
    let case = blocking(move || triage.submit(&bytes)).await?;
    let body = serde_json::json!({
        "case_id": case.case_id,
        "prediction": case.prediction,
        "priority": case.priority_score,
    });
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

#[derive(Debug, Deserialize)]
struct ListQuery {
    status: Option<String>,
}

async fn list(State(state): State<AppState>, Query(q): Query<ListQuery>) -> Result<Response> {
    match q.status.as_deref() {
        None | Some("pending") => Ok(Json(state.triage.pending_queue()).into_response()),
        Some("reviewed") => {
            let cases: Vec<_> = state.triage.all_cases().into_iter().filter(|c| c.status == Status::Reviewed).collect();
            Ok(Json(cases).into_response())
        }
        Some("all") => Ok(Json(state.triage.all_cases()).into_response()),
        Some(other) => Err(ServiceError::Validation(format!("unknown status filter {other:?}"))),
    }
}

fn parse_id(raw: &str) -> Result<CaseId> {
    raw.parse().map_err(|_| ServiceError::NotFound(raw.to_string()))
}

async fn case(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response> {
    Ok(Json(state.triage.case(parse_id(&id)?)?).into_response())
}

#[derive(Debug, Deserialize)]
struct ExplanationQuery {
    method: Option<String>,
    target: Option<String>,
}

async fn explanation(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<ExplanationQuery>,
) -> Result<Response> {
    let id = parse_id(&id)?;
    let method: AttributionMethod = q
        .method
        .as_deref()
        .unwrap_or("gradcam")
        .parse()
        .map_err(|e: nailguard::Error| ServiceError::Validation(e.to_string()))?;
    let triage = state.triage.clone();
    let body = blocking(move || triage.explanation(id, method, q.target.as_deref())).await?;
    Ok(([(header::CONTENT_TYPE, "application/json")], body.as_ref().clone()).into_response())
}

async fn review(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: std::result::Result<Json<ReviewRequest>, axum::extract::rejection::JsonRejection>,
) -> Result<Response> {
    let Json(req) = body.map_err(|e| ServiceError::Validation(e.body_text()))?;
    Ok(Json(state.triage.review(parse_id(&id)?, req)?).into_response())
}

async fn models(State(state): State<AppState>) -> Json<serde_json::Value> {
    Json(serde_json::json!(state.triage.models()))
}

async fn activate(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response> {
    state.triage.activate(&id)?;
    Ok(Json(serde_json::json!({ "active_model": id })).into_response())
}
