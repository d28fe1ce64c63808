//! Local HTTP API the operator console drives: upload a frame, run the
//! pipeline with edited parameters, fetch overlays and component heatmaps.

use std::collections::{HashMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use artps_core::features::ComponentId;
use artps_core::overlay::OverlaySidecar;
use artps_core::{decode_frame, frame_id, io, run_pipeline, Error as CoreError, PipelineConfig, RunOutput, RunReport};
use axum::extract::{DefaultBodyLimit, Multipart, Path as UrlPath, State};
use axum::http::{header, HeaderMap, HeaderName, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::cors::{AllowOrigin, CorsLayer};

pub const SESSION_HEADER: &str = "x-artps-session";
pub const RUN_ID_HEADER: &str = "x-artps-run-id";
const DEFAULT_SESSION: &str = "default";
const CACHED_RUNS: usize = 16;
const IMAGE_FILE: &str = "image.png";
const DEPTH_FILE: &str = "depth.bin";

#[derive(Debug, Clone)]
pub struct ServiceOptions {
    /// Uploaded frames live here; the only state that survives a restart.
    pub store_dir: PathBuf,
    /// Used when a run request carries no config.
    pub default_config: PipelineConfig,
}

struct CachedRun {
    output: RunOutput,
    overlay_png: Vec<u8>,
    sidecar: OverlaySidecar,
}

#[derive(Default)]
struct Session {
    last_config: Option<PipelineConfig>,
    last_report: Option<RunReport>,
}

/// Published runs and their insertion order, oldest first.
type RunCache = (HashMap<String, Arc<CachedRun>>, VecDeque<String>);

struct Inner {
    opts: ServiceOptions,
    sessions: Mutex<HashMap<String, Arc<tokio::sync::Mutex<Session>>>>,
    runs: Mutex<RunCache>,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    pub fn new(opts: ServiceOptions) -> std::io::Result<Self> {
        std::fs::create_dir_all(&opts.store_dir)?;
        Ok(Self(Arc::new(Inner {
            opts,
            sessions: Mutex::new(HashMap::new()),
            runs: Mutex::new((HashMap::new(), VecDeque::new())),
        })))
    }

    fn session(&self, id: &str) -> Arc<tokio::sync::Mutex<Session>> {
        let mut map = self.0.sessions.lock().expect("session map poisoned");
        map.entry(id.to_string()).or_default().clone()
    }

    fn publish(&self, id: String, run: CachedRun) {
        let mut guard = self.0.runs.lock().expect("run cache poisoned");
        let (map, order) = &mut *guard;
        if map.insert(id.clone(), Arc::new(run)).is_none() {
            order.push_back(id);
        }
        while order.len() > CACHED_RUNS {
            if let Some(old) = order.pop_front() {
                map.remove(&old);
            }
        }
    }

    fn cached(&self, id: &str) -> Option<Arc<CachedRun>> {
        self.0.runs.lock().expect("run cache poisoned").0.get(id).cloned()
    }

    fn frame_dir(&self, id: &str) -> PathBuf {
        self.0.opts.store_dir.join(id)
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        let status = match e {
            CoreError::Config(_) | CoreError::InvalidParam(_) | CoreError::DimensionMismatch { .. } => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            CoreError::InvalidInput(_) | CoreError::Format(_) | CoreError::Image(_) | CoreError::ChannelCount { .. } => {
                StatusCode::BAD_REQUEST
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Identifier of a cached run: frame id plus the leading 16 digits of the config hash.
pub fn run_id(report: &RunReport) -> String {
    format!("{}-{}", report.frame_id, &report.config_hash[..16])
}

pub fn router(state: AppState) -> Router {
    let limit = state.0.opts.default_config.io.max_upload_bytes;
    Router::new()
        .route("/api/health", get(health))
        .route("/api/config/default", get(default_config))
        .route("/api/config/schema", get(config_schema))
        .route("/api/frames", post(upload_frame).layer(DefaultBodyLimit::max(limit)))
        .route("/api/run", post(run))
        .route("/api/run/{id}/overlay.png", get(overlay_png))
        .route("/api/run/{id}/overlay.json", get(overlay_json))
        .route("/api/run/{id}/component/{name}", get(component_png))
        .layer(localhost_cors())
        .with_state(state)
}

fn localhost_cors() -> CorsLayer {
    CorsLayer::new()
        .allow_origin(AllowOrigin::predicate(|origin: &HeaderValue, _| {
            origin.to_str().map(is_localhost_origin).unwrap_or(false)
        }))
        .allow_methods([axum::http::Method::GET, axum::http::Method::POST])
        .allow_headers([header::CONTENT_TYPE, HeaderName::from_static(SESSION_HEADER)])
        .expose_headers([HeaderName::from_static(RUN_ID_HEADER)])
}

fn is_localhost_origin(origin: &str) -> bool {
    let rest = match origin.strip_prefix("http://").or_else(|| origin.strip_prefix("https://")) {
        Some(r) => r,
        None => return false,
    };
    let host = match rest.rsplit_once(':') {
        Some((h, port)) if !h.ends_with(']') || rest.starts_with('[') => {
            if port.chars().all(|c| c.is_ascii_digit()) {
                h
            } else {
                rest
            }
        }
        _ => rest,
    };
    matches!(host, "localhost" | "127.0.0.1" | "[::1]")
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok", "version": env!("CARGO_PKG_VERSION") }))
}

async fn default_config(State(state): State<AppState>) -> Json<PipelineConfig> {
    Json(state.0.opts.default_config.clone())
}

async fn config_schema() -> Response {
    (
        [(header::CONTENT_TYPE, "application/json")],
        PipelineConfig::json_schema(),
    )
        .into_response()
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FrameCreated {
    pub frame_id: String,
}

fn multipart_error(e: axum::extract::multipart::MultipartError) -> ApiError {
    ApiError::new(e.status(), e.body_text())
}

async fn upload_frame(State(state): State<AppState>, mut form: Multipart) -> ApiResult<(StatusCode, Json<FrameCreated>)> {
    let mut image = None;
    let mut depth = None;
    while let Some(field) = form.next_field().await.map_err(multipart_error)? {
        let name = field.name().unwrap_or_default().to_string();
        let bytes = field.bytes().await.map_err(multipart_error)?;
        match name.as_str() {
            "image" => image = Some(bytes.to_vec()),
            "depth" => depth = Some(bytes.to_vec()),
            other => return Err(ApiError::new(StatusCode::BAD_REQUEST, format!("unexpected field '{other}'"))),
        }
    }
    let image = image.ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "missing 'image' field"))?;
    // reject undecodable uploads now rather than at run time
    let cfg = PipelineConfig::default();
    decode_frame(&image, None, &cfg)?;
    if let Some(d) = &depth {
        artps_core::depthpp::decode_depth(d, None, &cfg.depth.load)?;
    }
    let id = frame_id(&image, depth.as_deref());
    let dir = state.frame_dir(&id);
    let write = move || -> std::io::Result<()> {
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join(IMAGE_FILE), &image)?;
        match depth {
            Some(d) => std::fs::write(dir.join(DEPTH_FILE), d),
            None => Ok(()),
        }
    };
    tokio::task::spawn_blocking(write)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    log::info!("stored frame {id}");
    Ok((StatusCode::CREATED, Json(FrameCreated { frame_id: id })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRequest {
    pub frame_id: String,
    #[serde(default)]
    pub config: Option<serde_json::Value>,
}

/// Image bytes and optional depth bytes of a stored frame.
type StoredFrame = (Vec<u8>, Option<Vec<u8>>);

fn load_frame_bytes(dir: &Path) -> std::io::Result<Option<StoredFrame>> {
    let image = match std::fs::read(dir.join(IMAGE_FILE)) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(e),
    };
    let depth = match std::fs::read(dir.join(DEPTH_FILE)) {
        Ok(b) => Some(b),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(e),
    };
    Ok(Some((image, depth)))
}

fn valid_frame_id(id: &str) -> bool {
    id.len() == 16 && id.bytes().all(|b| b.is_ascii_hexdigit())
}

async fn run(State(state): State<AppState>, headers: HeaderMap, body: axum::body::Bytes) -> ApiResult<Response> {
    let req: RunRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("malformed run request: {e}")))?;
    let session_id = headers
        .get(SESSION_HEADER)
        .and_then(|v| v.to_str().ok())
        .unwrap_or(DEFAULT_SESSION)
        .to_string();
    let session = state.session(&session_id);
    let mut guard = session
        .try_lock()
        .map_err(|_| ApiError::new(StatusCode::CONFLICT, "a run is already in flight for this session"))?;

    let cfg = match req.config {
        Some(v) => PipelineConfig::from_value(v).map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?,
        None => state.0.opts.default_config.clone(),
    };
    if !valid_frame_id(&req.frame_id) {
        return Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown frame '{}'", req.frame_id)));
    }
    let dir = state.frame_dir(&req.frame_id);
    let fid = req.frame_id.clone();
    let job_cfg = cfg.clone();
    let out = tokio::task::spawn_blocking(move || -> ApiResult<Option<CachedRun>> {
        let Some((image, depth)) =
            load_frame_bytes(&dir).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        else {
            return Ok(None);
        };
        let frame = decode_frame(&image, depth.as_deref(), &job_cfg)?;
        let output = run_pipeline(&frame, &job_cfg, &fid, None)?;
        let (overlay, sidecar) = output.overlay()?;
        let overlay_png = io::encode_png8(&overlay)?;
        Ok(Some(CachedRun {
            output,
            overlay_png,
            sidecar,
        }))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    let cached = out.ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown frame '{}'", req.frame_id)))?;

    let report = cached.output.report.clone();
    let id = run_id(&report);
    state.publish(id.clone(), cached);
    guard.last_config = Some(cfg);
    guard.last_report = Some(report.clone());
    log::info!("session {session_id}: run {id} found {} region(s)", report.regions.len());

    let mut resp = (
        [(header::CONTENT_TYPE, "application/json")],
        report.to_json(),
    )
        .into_response();
    resp.headers_mut()
        .insert(RUN_ID_HEADER, HeaderValue::from_str(&id).expect("hex id is a valid header"));
    Ok(resp)
}

fn unknown_run(id: &str) -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, format!("unknown run '{id}'"))
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

async fn overlay_png(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let run = state.cached(&id).ok_or_else(|| unknown_run(&id))?;
    Ok(png(run.overlay_png.clone()))
}

async fn overlay_json(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<OverlaySidecar>> {
    let run = state.cached(&id).ok_or_else(|| unknown_run(&id))?;
    Ok(Json(run.sidecar.clone()))
}

async fn component_png(
    State(state): State<AppState>,
    UrlPath((id, name)): UrlPath<(String, String)>,
) -> ApiResult<Response> {
    let run = state.cached(&id).ok_or_else(|| unknown_run(&id))?;
    let stem = name.strip_suffix(".png").unwrap_or(&name);
    let map = match stem {
        "fused" => Some(&run.output.fused),
        _ => stem
            .parse::<ComponentId>()
            .ok()
            .and_then(|c| run.output.component(c))
            .map(|c| &c.map),
    };
    let map = map.ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown component '{stem}'")))?;
    Ok(png(io::encode_heatmap(map)?))
}

/// Serves until the future `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: AppState,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn only_loopback_origins_pass() {
        assert!(is_localhost_origin("http://localhost:5173"));
        assert!(is_localhost_origin("http://127.0.0.1:8080"));
        assert!(is_localhost_origin("http://localhost"));
        assert!(is_localhost_origin("http://[::1]:3000"));
        assert!(!is_localhost_origin("http://localhost.evil.com"));
        assert!(!is_localhost_origin("https://example.org"));
        assert!(!is_localhost_origin("null"));
    }

    #[test]
    fn frame_ids_are_sixteen_hex_digits() {
        assert!(valid_frame_id("0123456789abcdef"));
        assert!(!valid_frame_id("../../etc/passwd"));
        assert!(!valid_frame_id("0123"));
    }
}
