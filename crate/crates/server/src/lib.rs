//! HTTP service that runs a baseline and a fine-tuned checkpoint side by
//! side on uploaded line images.
//!
//! Endpoints:
//!
//! * `POST /api/recognize?model=baseline|finetuned|both` with a multipart
//!   `image` field.
//! * `GET /api/models` lists both loaded checkpoints.
//! * `GET /api/health` reports status, uptime and versions.

use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::extract::{DefaultBodyLimit, Multipart, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use linerec::infer::{input_digest, preprocess_bytes, InferError, LoadedModel, PredictionJson};
use linerec::model::CHECKPOINT_VERSION;
use log::{error, info};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};
use tower_http::services::ServeDir;

/// Room for multipart boundaries and part headers on top of the image cap.
const MULTIPART_OVERHEAD: usize = 64 * 1024;

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    pub baseline: PathBuf,
    pub finetuned: PathBuf,
    pub max_upload_bytes: usize,
    pub request_timeout: Duration,
    /// `*` for any origin, otherwise one exact origin.
    pub cors_origin: String,
    /// Built UI assets served at `/`.
    pub static_dir: Option<PathBuf>,
}

impl ServiceConfig {
    pub fn new(baseline: PathBuf, finetuned: PathBuf) -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            baseline,
            finetuned,
            max_upload_bytes: 5 * 1024 * 1024,
            request_timeout: Duration::from_secs(30),
            cors_origin: "*".into(),
            static_dir: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("cannot load {role} checkpoint {path}: {source}")]
    Load { role: &'static str, path: PathBuf, source: InferError },
    #[error("baseline and fine-tuned checkpoints use different dictionaries")]
    DictMismatch,
    #[error("invalid CORS origin {0:?}")]
    BadOrigin(String),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

/// Shared read-only state.
pub struct AppState {
    pub baseline: LoadedModel,
    pub finetuned: LoadedModel,
    pub max_upload_bytes: usize,
    pub request_timeout: Duration,
    started: Instant,
}

impl AppState {
    pub fn new(baseline: LoadedModel, finetuned: LoadedModel, max_upload_bytes: usize, request_timeout: Duration) -> Result<Self, ServerError> {
        if baseline.dict() != finetuned.dict() {
            return Err(ServerError::DictMismatch);
        }
        Ok(Self { baseline, finetuned, max_upload_bytes, request_timeout, started: Instant::now() })
    }

    pub fn load(cfg: &ServiceConfig) -> Result<Self, ServerError> {
        let load = |role, path: &PathBuf| {
            LoadedModel::load(path).map_err(|source| ServerError::Load { role, path: path.clone(), source })
        };
        Self::new(load("baseline", &cfg.baseline)?, load("finetuned", &cfg.finetuned)?, cfg.max_upload_bytes, cfg.request_timeout)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Which {
    Baseline,
    Finetuned,
    Both,
}

#[derive(Deserialize)]
struct RecognizeQuery {
    model: Option<String>,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct RecognizeResponse {
    pub input_digest: String,
    pub results: Results,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct Results {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub baseline: Option<PredictionJson>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub finetuned: Option<PredictionJson>,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct ModelInfo {
    pub name: String,
    pub dict_size: usize,
    pub parameter_count: usize,
    pub digest: String,
    pub identical: bool,
}

fn error_response(status: StatusCode, code: &str, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": code, "message": message.into() }))).into_response()
}

fn internal(what: impl std::fmt::Display) -> Response {
    let id = uuid::Uuid::new_v4().to_string();
    error!("internal error {id}: {what}");
    (StatusCode::INTERNAL_SERVER_ERROR, Json(json!({ "error": "INTERNAL", "id": id }))).into_response()
}

async fn read_image(mut multipart: Multipart, cap: usize) -> Result<Vec<u8>, Response> {
    let too_large = || error_response(StatusCode::BAD_REQUEST, "PAYLOAD_TOO_LARGE", format!("image exceeds {cap} bytes"));
    let bad = |e: axum::extract::multipart::MultipartError| {
        if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
            too_large()
        } else {
            error_response(StatusCode::BAD_REQUEST, "BAD_MULTIPART", e.body_text())
        }
    };
    while let Some(mut field) = multipart.next_field().await.map_err(bad)? {
        let wanted = field.name() == Some("image") || field.file_name().is_some();
        if !wanted {
            continue;
        }
        let mut bytes = Vec::new();
        while let Some(chunk) = field.chunk().await.map_err(bad)? {
            if bytes.len() + chunk.len() > cap {
                return Err(too_large());
            }
            bytes.extend_from_slice(&chunk);
        }
        return Ok(bytes);
    }
    Err(error_response(StatusCode::BAD_REQUEST, "MISSING_IMAGE", "multipart field `image` is required"))
}

async fn recognize(
    State(state): State<Arc<AppState>>,
    Query(query): Query<RecognizeQuery>,
    headers: HeaderMap,
    multipart: Result<Multipart, axum::extract::multipart::MultipartRejection>,
) -> Response {
    let which = match query.model.as_deref().unwrap_or("both") {
        "baseline" => Which::Baseline,
        "finetuned" => Which::Finetuned,
        "both" => Which::Both,
        other => {
            return error_response(
                StatusCode::UNPROCESSABLE_ENTITY,
                "UNKNOWN_MODEL",
                format!("model must be baseline, finetuned or both, not {other:?}"),
            )
        }
    };
    let cap = state.max_upload_bytes;
    let declared = headers
        .get(header::CONTENT_LENGTH)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.parse::<usize>().ok());
    if declared.is_some_and(|n| n > cap + MULTIPART_OVERHEAD) {
        return error_response(StatusCode::BAD_REQUEST, "PAYLOAD_TOO_LARGE", format!("request exceeds {cap} bytes"));
    }
    let multipart = match multipart {
        Ok(m) => m,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, "BAD_MULTIPART", e.body_text()),
    };
    let bytes = match read_image(multipart, cap).await {
        Ok(b) => b,
        Err(resp) => return resp,
    };
    let timeout = state.request_timeout;
    let work = tokio::task::spawn_blocking(move || run_models(&state, which, &bytes));
    match tokio::time::timeout(timeout, work).await {
        Ok(Ok(Ok(body))) => Json(body).into_response(),
        Ok(Ok(Err(InferError::UndecodableImage(msg)))) => error_response(StatusCode::BAD_REQUEST, "UNDECODABLE_IMAGE", msg),
        Ok(Ok(Err(e))) => internal(e),
        Ok(Err(join)) => internal(join),
        Err(_) => internal("request timed out"),
    }
}

fn run_models(state: &AppState, which: Which, bytes: &[u8]) -> Result<RecognizeResponse, InferError> {
    let input = preprocess_bytes(bytes)?;
    let run = |m: &LoadedModel| m.recognize(&input).map(|p| PredictionJson::from(&p));
    let baseline = matches!(which, Which::Baseline | Which::Both).then(|| run(&state.baseline)).transpose()?;
    let finetuned = matches!(which, Which::Finetuned | Which::Both).then(|| run(&state.finetuned)).transpose()?;
    Ok(RecognizeResponse { input_digest: input_digest(bytes), results: Results { baseline, finetuned } })
}

async fn models(State(state): State<Arc<AppState>>) -> Json<Vec<ModelInfo>> {
    let identical = state.baseline.digest == state.finetuned.digest;
    let info = |name: &str, m: &LoadedModel| ModelInfo {
        name: name.into(),
        dict_size: m.dict().len(),
        parameter_count: m.checkpoint.params.len(),
        digest: m.digest.clone(),
        identical,
    };
    Json(vec![info("baseline", &state.baseline), info("finetuned", &state.finetuned)])
}

async fn health(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "uptime": state.started.elapsed().as_secs_f64(),
        "versions": {
            "service": env!("CARGO_PKG_VERSION"),
            "core": linerec::VERSION,
            "checkpoint_format": CHECKPOINT_VERSION,
        }
    }))
}

fn cors(origin: &str) -> Result<CorsLayer, ServerError> {
    let layer = CorsLayer::new().allow_methods(Any).allow_headers(Any);
    if origin == "*" {
        return Ok(layer.allow_origin(Any));
    }
    let value = HeaderValue::from_str(origin).map_err(|_| ServerError::BadOrigin(origin.into()))?;
    Ok(layer.allow_origin(AllowOrigin::exact(value)))
}

/// The API router over `state`, optionally serving static UI files.
pub fn router(state: Arc<AppState>, cors_origin: &str, static_dir: Option<&PathBuf>) -> Result<Router, ServerError> {
    let limit = state.max_upload_bytes + MULTIPART_OVERHEAD;
    let mut app = Router::new()
        .route("/api/recognize", post(recognize).layer(DefaultBodyLimit::max(limit)))
        .route("/api/models", get(models))
        .route("/api/health", get(health))
        .with_state(state);
    if let Some(dir) = static_dir {
        app = app.fallback_service(ServeDir::new(dir));
    }
    Ok(app.layer(cors(cors_origin)?))
}

/// Loads both checkpoints, binds, and serves until `shutdown` resolves.
/// `on_bound` receives the actual address (useful with port 0).
pub async fn serve<S, B>(cfg: ServiceConfig, shutdown: S, on_bound: B) -> Result<(), ServerError>
where
    S: Future<Output = ()> + Send + 'static,
    B: FnOnce(SocketAddr),
{
    let state = Arc::new(AppState::load(&cfg)?);
    let app = router(state, &cfg.cors_origin, cfg.static_dir.as_ref())?;
    let listener = tokio::net::TcpListener::bind(cfg.bind).await?;
    let addr = listener.local_addr()?;
    info!("listening on http://{addr}");
    on_bound(addr);
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await?;
    info!("server stopped");
    Ok(())
}
