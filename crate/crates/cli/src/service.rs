//! Local JSON service consumed by the review UI.

use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use bmaguard_core::imaging::RawScreenshot;
use bmaguard_core::pipeline::{error_log_line, Defender, OverrideChoice, TabId, VerdictId};
use bmaguard_core::{pngio, Error};

use crate::logbuf::LogBuffer;

/// Bumped on any incompatible change to request or response bodies.
pub const SCHEMA_VERSION: u32 = 1;

pub struct AppState {
    pub defender: Defender,
    pub logs: LogBuffer,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanRequest {
    pub domain: String,
    /// Base64-encoded PNG screenshot.
    #[serde(alias = "png")]
    pub png_base64: String,
    #[serde(default)]
    pub tab_id: TabId,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OverrideRequest {
    pub verdict_id: VerdictId,
    pub choice: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    pub fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            message: message.into(),
        }
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::NOT_FOUND,
            message: message.into(),
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidInput(_) | Error::Png(_) | Error::Parse { .. } | Error::Json(_) => StatusCode::BAD_REQUEST,
            Error::NotFound(_) => StatusCode::NOT_FOUND,
            Error::TabPaused(_) => StatusCode::CONFLICT,
            Error::Engine { .. } => StatusCode::BAD_GATEWAY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self {
            status,
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.message })).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

fn parse_body<T: for<'de> Deserialize<'de>>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/scan", post(scan))
        .route("/verdicts", get(verdicts))
        .route("/override", post(override_verdict))
        .route("/metrics", get(metrics))
        .route("/screenshot/:id", get(screenshot))
        .with_state(state)
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok", "schema_version": SCHEMA_VERSION }))
}

async fn scan(State(app): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let req: ScanRequest = parse_body(&body)?;
    if req.domain.trim().is_empty() {
        return Err(ApiError::bad_request("domain must not be empty"));
    }
    let png = base64::engine::general_purpose::STANDARD
        .decode(req.png_base64.trim())
        .map_err(|e| ApiError::bad_request(format!("png_base64 is not valid base64: {e}")))?;
    let img = pngio::decode_png(&png)?;
    let shot = RawScreenshot::new(img.width, img.height, img.pixels)?.with_domain(req.domain.clone());
    let app2 = app.clone();
    let result = tokio::task::spawn_blocking(move || app2.defender.scan(req.tab_id, &shot))
        .await
        .map_err(|e| ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            message: format!("scan task failed: {e}"),
        })?;
    match result {
        Ok(v) => {
            app.logs.push(v.log_line());
            Ok(Json(v).into_response())
        }
        Err(e) => {
            app.logs.push(error_log_line(app.defender.now(), req.tab_id, &req.domain, &e));
            Err(e.into())
        }
    }
}

async fn verdicts(State(app): State<Arc<AppState>>, Query(q): Query<HashMap<String, String>>) -> ApiResult<Response> {
    let since = match q.get("since") {
        None => None,
        Some(s) => Some(
            DateTime::parse_from_rfc3339(s)
                .map_err(|e| ApiError::bad_request(format!("since {s:?} is not RFC 3339: {e}")))?
                .with_timezone(&Utc),
        ),
    };
    Ok(Json(app.defender.verdicts_since(since)).into_response())
}

async fn override_verdict(State(app): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let req: OverrideRequest = parse_body(&body)?;
    let choice: OverrideChoice = req.choice.parse().map_err(|e: Error| ApiError::bad_request(e.to_string()))?;
    let record = app.defender.record_override(req.verdict_id, choice)?;
    Ok(Json(record).into_response())
}

async fn metrics(State(app): State<Arc<AppState>>) -> Json<bmaguard_core::pipeline::LatencyReport> {
    Json(app.defender.latency_report())
}

async fn screenshot(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let id: VerdictId = id
        .parse()
        .map_err(|_| ApiError::bad_request(format!("verdict id {id:?} is not a number")))?;
    if app.defender.verdict(id).is_none() {
        return Err(ApiError::not_found(format!("verdict {id}")));
    }
    let png = app
        .defender
        .screenshot_png(id)
        .ok_or_else(|| ApiError::not_found(format!("no screenshot retained for verdict {id}")))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}
