//! HTTP session service for interactive supervised segmentation.
//!
//! A client uploads an image, replaces the scribble strokes as often as it
//! likes and asks for a segmentation of the current stroke set. Sessions live
//! in memory only. Each session runs at most one segmentation at a time;
//! further requests get `409 Conflict` until it finishes.
//!
//! Bodies are JSON. Images and label maps travel as base64 strings; label maps
//! are indexed PNGs whose pixel values are the stroke labels.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use coseg::io::{decode_image, encode_label_png};
use coseg::strokes::{rasterize, validate_strokes};
use coseg::{AnalysisOperator, SegConfig, Segmenter, Stroke};

/// Default cap on uploaded image size, in pixels.
pub const DEFAULT_MAX_PIXELS: usize = 4_000_000;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    pub max_pixels: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { bind: SocketAddr::from(([127, 0, 0, 1], 8080)), max_pixels: DEFAULT_MAX_PIXELS }
    }
}

impl ServiceConfig {
    /// Reads `SEG_BIND` and `SEG_MAX_PIXELS`, falling back to the defaults.
    pub fn from_env() -> Result<Self, String> {
        let mut config = Self::default();
        if let Ok(bind) = std::env::var("SEG_BIND") {
            config.bind = bind.parse().map_err(|e| format!("SEG_BIND={bind}: {e}"))?;
        }
        if let Ok(max) = std::env::var("SEG_MAX_PIXELS") {
            config.max_pixels = max.parse().map_err(|e| format!("SEG_MAX_PIXELS={max}: {e}"))?;
        }
        Ok(config)
    }
}

/// Request failure rendered as `{"error": ...}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("unknown session {id}"))
    }
}

impl From<coseg::Error> for ApiError {
    fn from(e: coseg::Error) -> Self {
        let status = match e {
            coseg::Error::Parameter(_) | coseg::Error::Config(_) | coseg::Error::Dimension(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Deserialize)]
pub struct CreateSession {
    /// Base64 PNG or PNM bytes.
    pub image: String,
    /// Pipeline settings; omitted fields take the supervised defaults.
    #[serde(default)]
    pub config: Option<SegConfig>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionCreated {
    pub id: String,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StrokeList {
    pub strokes: Vec<Stroke>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StrokesAccepted {
    pub strokes: usize,
    pub labels: usize,
    pub version: u64,
}

/// Outcome of one segmentation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentResult {
    /// Base64 indexed PNG; pixel value `v` is stroke label `v`.
    pub labels_png: String,
    pub energy: f64,
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
    pub millis: u128,
    /// Stroke-set version the result was computed from.
    pub version: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ScribbleMask {
    /// Base64 indexed PNG of the rasterized strokes (0 = unlabeled).
    pub mask_png: String,
    pub version: u64,
}

struct Session {
    image: Arc<Array3<f64>>,
    segmenter: Arc<Segmenter>,
    strokes: Arc<Vec<Stroke>>,
    labels: usize,
    version: u64,
    busy: bool,
    last: Option<SegmentResult>,
}

/// Shared service state.
#[derive(Clone)]
pub struct AppState {
    sessions: Arc<Mutex<HashMap<String, Arc<Mutex<Session>>>>>,
    operator: Arc<AnalysisOperator>,
    max_pixels: usize,
}

impl AppState {
    pub fn new(operator: Arc<AnalysisOperator>, max_pixels: usize) -> Self {
        Self { sessions: Arc::default(), operator, max_pixels }
    }

    fn session(&self, id: &str) -> ApiResult<Arc<Mutex<Session>>> {
        self.sessions.lock().expect("session table lock").get(id).cloned().ok_or_else(|| ApiError::not_found(id))
    }
}

pub fn router(state: AppState) -> Router {
    // base64 inflates by 4/3; allow generous PNG/PPM overhead on top of raw RGB
    let body_limit = state.max_pixels.saturating_mul(8).max(1 << 20);
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", axum::routing::delete(delete_session))
        .route("/sessions/{id}/strokes", put(update_strokes))
        .route("/sessions/{id}/segment", post(run_segmentation))
        .route("/sessions/{id}/result", get(last_result))
        .route("/sessions/{id}/mask", get(scribble_mask))
        .layer(DefaultBodyLimit::max(body_limit))
        .with_state(state)
}

/// Binds and serves until ctrl-c.
pub async fn serve(config: ServiceConfig, operator: Arc<AnalysisOperator>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(config.bind).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(AppState::new(operator, config.max_pixels)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

async fn create_session(State(state): State<AppState>, Json(req): Json<CreateSession>) -> ApiResult<(StatusCode, Json<SessionCreated>)> {
    let bytes = BASE64
        .decode(req.image.trim())
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("image is not valid base64: {e}")))?;
    let max_pixels = state.max_pixels;
    let image = tokio::task::spawn_blocking(move || {
        check_header_size(&bytes, max_pixels)?;
        decode_image(&bytes).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("cannot decode image: {e}")))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    let (height, width, _) = image.dim();
    if height * width > state.max_pixels {
        return Err(too_large(height * width, state.max_pixels));
    }
    let config = req.config.unwrap_or_else(SegConfig::supervised);
    let segmenter = Segmenter::with_operator(config, state.operator.clone())?;
    let id = uuid::Uuid::new_v4().simple().to_string();
    let session = Session {
        image: Arc::new(image),
        segmenter: Arc::new(segmenter),
        strokes: Arc::new(Vec::new()),
        labels: 0,
        version: 0,
        busy: false,
        last: None,
    };
    state.sessions.lock().expect("session table lock").insert(id.clone(), Arc::new(Mutex::new(session)));
    tracing::debug!(%id, height, width, "session created");
    Ok((StatusCode::CREATED, Json(SessionCreated { id, width, height })))
}

fn too_large(pixels: usize, max: usize) -> ApiError {
    ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, format!("image has {pixels} pixels, limit is {max}"))
}

/// Rejects oversized PNGs from their header, before decoding the pixels.
fn check_header_size(bytes: &[u8], max_pixels: usize) -> ApiResult<()> {
    if bytes.len() >= 24 && bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        let w = u32::from_be_bytes(bytes[16..20].try_into().expect("4 bytes")) as usize;
        let h = u32::from_be_bytes(bytes[20..24].try_into().expect("4 bytes")) as usize;
        if w.saturating_mul(h) > max_pixels {
            return Err(too_large(w.saturating_mul(h), max_pixels));
        }
    }
    Ok(())
}

async fn delete_session(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    match state.sessions.lock().expect("session table lock").remove(&id) {
        Some(_) => Ok(StatusCode::NO_CONTENT),
        None => Err(ApiError::not_found(&id)),
    }
}

async fn update_strokes(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<StrokeList>,
) -> ApiResult<Json<StrokesAccepted>> {
    let labels = validate_strokes(&req.strokes)?;
    let session = state.session(&id)?;
    let mut s = session.lock().expect("session lock");
    s.strokes = Arc::new(req.strokes);
    s.labels = labels;
    s.version += 1;
    Ok(Json(StrokesAccepted { strokes: s.strokes.len(), labels, version: s.version }))
}

/// Clears the busy flag when a run ends, including on panic.
struct RunGuard(Arc<Mutex<Session>>);

impl Drop for RunGuard {
    fn drop(&mut self) {
        if let Ok(mut s) = self.0.lock() {
            s.busy = false;
        }
    }
}

async fn run_segmentation(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<SegmentResult>> {
    let session = state.session(&id)?;
    let (image, segmenter, strokes, version) = {
        let mut s = session.lock().expect("session lock");
        if s.busy {
            return Err(ApiError::new(StatusCode::CONFLICT, "a segmentation is already running for this session"));
        }
        if s.labels < 2 {
            return Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                format!("segmentation needs strokes of at least 2 labels, found {}", s.labels),
            ));
        }
        s.busy = true;
        (s.image.clone(), s.segmenter.clone(), s.strokes.clone(), s.version)
    };
    let guard = RunGuard(session.clone());
    let result = tokio::task::spawn_blocking(move || -> ApiResult<SegmentResult> {
        let (h, w, _) = image.dim();
        let mask = rasterize(&strokes, h, w);
        let report = segmenter.segment_supervised(&image, &mask)?;
        if !report.energy.is_finite() {
            return Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "solver produced a non-finite energy"));
        }
        Ok(SegmentResult {
            labels_png: BASE64.encode(encode_label_png(&report.label_map()?)),
            energy: report.energy,
            gap: report.gap,
            iterations: report.iterations,
            converged: report.converged,
            millis: report.millis,
            version,
        })
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("segmentation task failed: {e}")))??;
    session.lock().expect("session lock").last = Some(result.clone());
    drop(guard);
    Ok(Json(result))
}

async fn last_result(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<SegmentResult>> {
    let session = state.session(&id)?;
    let s = session.lock().expect("session lock");
    s.last
        .clone()
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("session {id} has no result yet")))
}

/// Debug view of the scribble mask the next run would use.
async fn scribble_mask(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<ScribbleMask>> {
    let session = state.session(&id)?;
    let (dim, strokes, version) = {
        let s = session.lock().expect("session lock");
        let (h, w, _) = s.image.dim();
        ((h, w), s.strokes.clone(), s.version)
    };
    let mask: Array2<u8> = rasterize(&strokes, dim.0, dim.1);
    Ok(Json(ScribbleMask { mask_png: BASE64.encode(encode_label_png(&mask)), version }))
}
