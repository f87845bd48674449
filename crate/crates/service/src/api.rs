//! REST interface.
//!
//! ```text
//! PUT  /users/{id}                 register or update a profile
//! POST /users/{id}/uploads         raw ZIP body, 202 {job_id}
//! GET  /jobs/{id}
//! GET  /users/{id}/predictions     ?date=YYYY-MM-DD
//! POST /users/{id}/chat            {"message": ...}
//! GET  /metrics/latency            ?last=N
//! ```

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::json;

use sepa_core::ingestion::UserProfile;
use sepa_core::modeling::ModelError;
use sepa_core::UserId;
use sepa_retrieval::CoachResponse;

use crate::app::{App, AppError};
use crate::latency::LatencyError;

/// Largest accepted archive.
pub const MAX_UPLOAD_BYTES: usize = 256 * 1024 * 1024;

impl IntoResponse for AppError {
    fn into_response(self) -> Response {
        let status = match &self {
            AppError::UnknownUser(_) | AppError::UnknownJob(_) | AppError::NoFeatures { .. } => StatusCode::NOT_FOUND,
            AppError::Latency(LatencyError::NoData) => StatusCode::NOT_FOUND,
            AppError::Conflict(_) => StatusCode::CONFLICT,
            AppError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            AppError::Model(ModelError::UnknownUser(_)) => StatusCode::SERVICE_UNAVAILABLE,
            AppError::Model(ModelError::MissingFeatures(_)) => StatusCode::NOT_FOUND,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            log::error!("{self}");
        }
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

fn parse_json<T: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<T, AppError> {
    serde_json::from_slice(body).map_err(|e| AppError::Invalid(format!("malformed body: {e}")))
}

fn user_id(raw: &str) -> Result<UserId, AppError> {
    if raw.is_empty() || raw.len() > 128 || raw.chars().any(|c| c.is_control() || c == '/') {
        return Err(AppError::Invalid(format!("invalid user id {raw:?}")));
    }
    Ok(UserId::new(raw))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UploadAccepted {
    pub job_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatRequest {
    pub message: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatReply {
    pub turn_id: String,
    pub elapsed_ms: f64,
    #[serde(flatten)]
    pub response: CoachResponse,
}

#[derive(Debug, Deserialize)]
struct DateQuery {
    date: Option<String>,
}

#[derive(Debug, Deserialize)]
struct LastQuery {
    last: Option<String>,
}

async fn put_user(State(app): State<Arc<App>>, Path(id): Path<String>, body: Bytes) -> Result<Response, AppError> {
    let id = user_id(&id)?;
    let mut value: serde_json::Value = parse_json(&body)?;
    match value.get("user_id") {
        None => {
            if let Some(obj) = value.as_object_mut() {
                obj.insert("user_id".into(), json!(id.as_str()));
            }
        }
        Some(v) if v.as_str() == Some(id.as_str()) => {}
        Some(_) => return Err(AppError::Invalid("user_id in body does not match the path".into())),
    }
    let profile: UserProfile =
        serde_json::from_value(value).map_err(|e| AppError::Invalid(format!("malformed profile: {e}")))?;
    let created = app.store.user(&id)?.is_none();
    app.register_user(&profile)?;
    let status = if created { StatusCode::CREATED } else { StatusCode::OK };
    Ok((status, Json(profile)).into_response())
}

async fn post_upload(State(app): State<Arc<App>>, Path(id): Path<String>, body: Bytes) -> Result<Response, AppError> {
    let id = user_id(&id)?;
    let job = app.upload(&id, body.to_vec())?;
    Ok((StatusCode::ACCEPTED, Json(UploadAccepted { job_id: job.id })).into_response())
}

async fn get_job(State(app): State<Arc<App>>, Path(id): Path<String>) -> Result<Response, AppError> {
    Ok(Json(app.job(&id)?).into_response())
}

async fn get_predictions(
    State(app): State<Arc<App>>,
    Path(id): Path<String>,
    Query(q): Query<DateQuery>,
) -> Result<Response, AppError> {
    let id = user_id(&id)?;
    let date = q
        .date
        .map(|d| NaiveDate::parse_from_str(&d, "%Y-%m-%d").map_err(|_| AppError::Invalid(format!("bad date {d:?}"))))
        .transpose()?;
    Ok(Json(app.predictions(&id, date)?).into_response())
}

async fn post_chat(State(app): State<Arc<App>>, Path(id): Path<String>, body: Bytes) -> Result<Response, AppError> {
    let id = user_id(&id)?;
    let req: ChatRequest = parse_json(&body)?;
    if req.message.trim().is_empty() {
        return Err(AppError::Invalid("empty message".into()));
    }
    let outcome = app.chat(&id, &req.message).await?;
    let reply =
        ChatReply { turn_id: outcome.timing.turn_id.clone(), elapsed_ms: outcome.timing.elapsed_ms, response: outcome.response };
    Ok(Json(reply).into_response())
}

async fn get_latency(State(app): State<Arc<App>>, Query(q): Query<LastQuery>) -> Result<Response, AppError> {
    let last = match q.last {
        None => None,
        Some(s) => match s.parse::<usize>() {
            Ok(n) if n > 0 => Some(n),
            _ => return Err(AppError::Invalid(format!("bad window {s:?}"))),
        },
    };
    Ok(Json(app.latency(last)?).into_response())
}

async fn require_token(State(app): State<Arc<App>>, req: Request, next: Next) -> Response {
    if let Some(token) = &app.api_token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|v| v == token);
        if !ok {
            return (StatusCode::UNAUTHORIZED, Json(json!({ "error": "missing or wrong bearer token" }))).into_response();
        }
    }
    next.run(req).await
}

pub fn router(app: Arc<App>) -> Router {
    Router::new()
        .route("/users/{id}", put(put_user))
        .route("/users/{id}/uploads", post(post_upload))
        .route("/jobs/{id}", get(get_job))
        .route("/users/{id}/predictions", get(get_predictions))
        .route("/users/{id}/chat", post(post_chat))
        .route("/metrics/latency", get(get_latency))
        .layer(middleware::from_fn_with_state(app.clone(), require_token))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(app)
}
