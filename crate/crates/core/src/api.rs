//! REST API.

use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, Request, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use fl_protocol::{FunctionDescriptor, FunctionId, InvocationOutcome, PlatformErrorKind, DEFAULT_MAX_WASM};
use serde::Deserialize;
use serde_json::{json, value::RawValue};

use crate::controller::{Core, CoreError};
use crate::net;

pub const TIMEOUT_HEADER: &str = "x-fl-timeout-ms";
pub const CORRELATION_HEADER: &str = "x-fl-correlation-id";

#[derive(Clone)]
pub struct ApiState {
    pub core: Arc<Core>,
    pub token: Option<Arc<str>>,
    pub default_memory_mb: u32,
    pub connect_timeout: Duration,
}

pub fn router(state: ApiState) -> Router {
    Router::new()
        .route("/v1/fn", get(list_functions))
        .route(
            "/v1/fn/{module}/{name}",
            get(get_function).post(create_function).put(update_function).delete(delete_function),
        )
        .route("/v1/invoke/{module}/{name}", post(invoke))
        .route("/v1/admin/connect", post(admin_connect))
        .route("/v1/admin/workers", get(admin_workers))
        .route("/v1/admin/stats", get(admin_stats))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .layer(DefaultBodyLimit::max(DEFAULT_MAX_WASM as usize + 1024))
        .with_state(state)
}

async fn require_token(State(state): State<ApiState>, req: Request, next: Next) -> Response {
    if let Some(token) = &state.token {
        let presented = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token.as_ref()) {
            return error_response(StatusCode::UNAUTHORIZED, "Unauthorized", "missing or invalid bearer token");
        }
    }
    next.run(req).await
}

fn error_response(status: StatusCode, kind: &str, message: &str) -> Response {
    (status, Json(json!({"status": "error", "kind": kind, "message": message}))).into_response()
}

impl IntoResponse for CoreError {
    fn into_response(self) -> Response {
        let (status, kind) = match &self {
            CoreError::AlreadyExists(_) => (StatusCode::CONFLICT, "AlreadyExists"),
            CoreError::NotFound(_) => (StatusCode::NOT_FOUND, "NotFound"),
            CoreError::InvalidWasm(_) => (StatusCode::BAD_REQUEST, "InvalidWasm"),
            CoreError::InvalidRequest(_) => (StatusCode::BAD_REQUEST, "InvalidRequest"),
            CoreError::StorageUnavailable(_) => (StatusCode::SERVICE_UNAVAILABLE, "StorageUnavailable"),
            CoreError::Connect(_) => (StatusCode::BAD_GATEWAY, "ConnectFailed"),
        };
        error_response(status, kind, &self.to_string())
    }
}

fn function_id(module: String, name: String) -> Result<FunctionId, CoreError> {
    FunctionId::new(module, name).map_err(|e| CoreError::InvalidRequest(e.to_string()))
}

fn metadata(d: &FunctionDescriptor) -> serde_json::Value {
    json!({
        "id": d.id.to_string(),
        "module": d.id.module(),
        "name": d.id.name(),
        "reserved_memory_mb": d.reserved_memory_mb,
        "size_bytes": d.wasm.len(),
        "created_at": d.created_at,
        "updated_at": d.updated_at,
    })
}

#[derive(Debug, Deserialize)]
struct UploadQuery {
    memory_mb: Option<u32>,
}

async fn create_function(
    State(state): State<ApiState>,
    Path((module, name)): Path<(String, String)>,
    Query(q): Query<UploadQuery>,
    body: Bytes,
) -> Result<Response, CoreError> {
    let id = function_id(module, name)?;
    let d = state.core.create_function(id, body.to_vec(), q.memory_mb.unwrap_or(state.default_memory_mb)).await?;
    Ok((StatusCode::CREATED, Json(metadata(&d))).into_response())
}

async fn update_function(
    State(state): State<ApiState>,
    Path((module, name)): Path<(String, String)>,
    Query(q): Query<UploadQuery>,
    body: Bytes,
) -> Result<Response, CoreError> {
    let id = function_id(module, name)?;
    let memory = match q.memory_mb {
        Some(m) => m,
        None => state.core.get_function(id.clone()).await?.reserved_memory_mb,
    };
    let d = state.core.update_function(id, body.to_vec(), memory).await?;
    Ok(Json(metadata(&d)).into_response())
}

async fn get_function(
    State(state): State<ApiState>,
    Path((module, name)): Path<(String, String)>,
) -> Result<Response, CoreError> {
    let d = state.core.get_function(function_id(module, name)?).await?;
    Ok(Json(metadata(&d)).into_response())
}

async fn delete_function(
    State(state): State<ApiState>,
    Path((module, name)): Path<(String, String)>,
) -> Result<StatusCode, CoreError> {
    state.core.delete_function(function_id(module, name)?).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn list_functions(State(state): State<ApiState>) -> Result<Response, CoreError> {
    let mut ids = state.core.list_functions().await?;
    ids.sort();
    let rows: Vec<_> = ids
        .iter()
        .map(|id| json!({"id": id.to_string(), "module": id.module(), "name": id.name()}))
        .collect();
    Ok(Json(rows).into_response())
}

/// HTTP status for an invocation outcome.
pub fn outcome_status(outcome: &InvocationOutcome) -> StatusCode {
    match outcome {
        InvocationOutcome::Ok { .. } | InvocationOutcome::FunctionError { .. } => StatusCode::OK,
        InvocationOutcome::PlatformError { kind, .. } => match kind {
            PlatformErrorKind::NotFound => StatusCode::NOT_FOUND,
            PlatformErrorKind::NoWorkerAvailable => StatusCode::SERVICE_UNAVAILABLE,
            PlatformErrorKind::Timeout => StatusCode::GATEWAY_TIMEOUT,
            PlatformErrorKind::WorkerLost => StatusCode::BAD_GATEWAY,
            PlatformErrorKind::GuestTrap | PlatformErrorKind::OutOfMemory | PlatformErrorKind::InvalidWasm => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        },
    }
}

/// JSON body for an invocation outcome. Payloads are passed through verbatim.
pub fn outcome_body(outcome: &InvocationOutcome) -> String {
    match outcome {
        InvocationOutcome::Ok { payload } => match RawValue::from_string(payload.clone()) {
            Ok(raw) => json!({"status": "ok", "payload": raw}).to_string(),
            Err(_) => json!({"status": "ok", "payload": payload}).to_string(),
        },
        InvocationOutcome::FunctionError { message } => {
            json!({"status": "error", "kind": "FunctionError", "message": message}).to_string()
        }
        InvocationOutcome::PlatformError { kind, message } => {
            json!({"status": "error", "kind": kind.as_str(), "message": message}).to_string()
        }
    }
}

async fn invoke(
    State(state): State<ApiState>,
    Path((module, name)): Path<(String, String)>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, CoreError> {
    let id = function_id(module, name)?;
    let timeout = match headers.get(TIMEOUT_HEADER) {
        Some(v) => {
            let ms: u64 = v
                .to_str()
                .ok()
                .and_then(|s| s.trim().parse().ok())
                .filter(|ms| *ms > 0)
                .ok_or_else(|| CoreError::InvalidRequest(format!("{TIMEOUT_HEADER} must be a positive integer")))?;
            Some(Duration::from_millis(ms))
        }
        None => None,
    };
    let args = String::from_utf8(body.to_vec())
        .map_err(|_| CoreError::InvalidRequest("arguments must be UTF-8 JSON".into()))?;
    let args = if args.trim().is_empty() { "{}".to_string() } else { args };
    let inv = state.core.invoke(id, args, timeout).await?;
    let mut resp = (
        outcome_status(&inv.outcome),
        [(header::CONTENT_TYPE, HeaderValue::from_static("application/json"))],
        outcome_body(&inv.outcome),
    )
        .into_response();
    if let Ok(v) = HeaderValue::from_str(&inv.correlation_id.to_string()) {
        resp.headers_mut().insert(CORRELATION_HEADER, v);
    }
    if let Some(w) = inv.worker_id.and_then(|w| HeaderValue::from_str(&w.to_string()).ok()) {
        resp.headers_mut().insert("x-fl-worker-id", w);
    }
    Ok(resp)
}

#[derive(Debug, Deserialize)]
struct ConnectRequest {
    address: String,
}

async fn admin_connect(State(state): State<ApiState>, Json(req): Json<ConnectRequest>) -> Result<Response, CoreError> {
    let worker = net::dial(&state.core, &req.address, state.connect_timeout).await?;
    Ok(Json(json!({"worker_id": worker.to_string(), "address": req.address})).into_response())
}

async fn admin_workers(State(state): State<ApiState>) -> Response {
    Json(state.core.workers()).into_response()
}

async fn admin_stats(State(state): State<ApiState>) -> Response {
    let mut stats = serde_json::Map::new();
    for (k, v) in state.core.counters_snapshot() {
        stats.insert(k.to_string(), v.into());
    }
    stats.insert("connected_workers".into(), state.core.connected_workers().into());
    stats.insert("pending_invocations".into(), state.core.pending_invocations().into());
    Json(stats).into_response()
}
