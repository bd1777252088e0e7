//! HTTP façade for interactive annotation.
//!
//! A data directory holds KITTI-style `<id>.bin` frames and, next to them,
//! `<id>.gsl` label files. Each frame gets at most one in-memory session
//! (working labels, revision, dirty flag) guarded by its own mutex, so all
//! mutations of one frame are serialized while other frames proceed.
//! Mutations carry the revision the client last saw; a mismatch is a 409
//! and leaves the session untouched.
//!
//! Routes:
//!
//! - `GET /frames`
//! - `GET /frames/{id}/cloud`
//! - `POST /frames/{id}/flood`
//! - `POST /frames/{id}/toggle`
//! - `PUT /frames/{id}/labels`
//! - `GET /frames/{id}/prediction?model=<path>`

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::cors::CorsLayer;

use groundseg::encoder::{encode_frame, grid_to_point_probs, normalize, BinGrid, DenseFrame, EncoderConfig};
use groundseg::{
    apply_seeds, derive_rings, forward, load_model, toggle_points, Error, FloodConfig, Label, Layout, PointCloud,
    PointLabels, SeedPoint,
};

/// Magic of the binary cloud stream.
pub const CLOUD_MAGIC: &[u8; 4] = b"GSC1";
pub const CLOUD_VERSION: u32 = 1;
pub const CLOUD_HEADER_LEN: usize = 16;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub data_dir: PathBuf,
    pub layout: Layout,
    pub encoder: EncoderConfig,
}

impl ServerConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self { data_dir: data_dir.into(), layout: Layout::Xyzi, encoder: EncoderConfig::default() }
    }
}

struct Session {
    cloud: PointCloud,
    grid: BinGrid,
    /// Interpolated but unnormalized: flooding works on raw heights.
    raw: DenseFrame,
    labels: PointLabels,
    revision: u64,
    dirty: bool,
}

pub struct AppState {
    cfg: ServerConfig,
    /// Frame id to `.bin` path, sorted by id.
    frames: BTreeMap<String, PathBuf>,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
}

impl AppState {
    /// Index the data directory. Fails if it cannot be read.
    pub fn open(cfg: ServerConfig) -> groundseg::Result<Self> {
        let dir = &cfg.data_dir;
        let entries = std::fs::read_dir(dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
        let mut frames = BTreeMap::new();
        for entry in entries {
            let path = entry.map_err(|e| Error::Io { path: dir.clone(), source: e })?.path();
            if path.extension().is_some_and(|x| x == "bin") {
                if let Some(stem) = path.file_stem() {
                    frames.insert(stem.to_string_lossy().into_owned(), path);
                }
            }
        }
        log::info!("indexed {} frames in {}", frames.len(), dir.display());
        Ok(Self { cfg, frames, sessions: Mutex::new(HashMap::new()) })
    }

    pub fn frame_ids(&self) -> impl Iterator<Item = &str> {
        self.frames.keys().map(String::as_str)
    }

    pub fn label_path(&self, id: &str) -> PathBuf {
        self.cfg.data_dir.join(format!("{id}.gsl"))
    }

    fn load_cloud(&self, id: &str) -> Result<PointCloud, ApiError> {
        let path = self.frames.get(id).ok_or_else(|| ApiError::not_found(format!("unknown frame `{id}`")))?;
        let cloud = groundseg::cloud::load_kitti_bin_with(path, self.cfg.layout, self.cfg.encoder.num_rings)?;
        Ok(derive_rings(&cloud)?)
    }

    /// Labels on disk, or all-unlabeled when no file exists yet.
    fn load_labels(&self, id: &str, count: usize) -> Result<PointLabels, ApiError> {
        let path = self.label_path(id);
        if !path.exists() {
            return Ok(PointLabels::unlabeled(count, id));
        }
        let labels = PointLabels::load(&path)?;
        if labels.len() != count {
            return Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                format!("{} holds {} labels for a frame of {count} points", path.display(), labels.len()),
            ));
        }
        Ok(labels)
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        let mut sessions = lock(&self.sessions);
        if let Some(s) = sessions.get(id) {
            return Ok(Arc::clone(s));
        }
        let cloud = self.load_cloud(id)?;
        let (raw, grid) = encode_frame(&cloud, &self.cfg.encoder)?;
        let labels = self.load_labels(id, cloud.len())?;
        let session = Arc::new(Mutex::new(Session { cloud, grid, raw, labels, revision: 0, dirty: false }));
        sessions.insert(id.to_string(), Arc::clone(&session));
        Ok(session)
    }

    fn loaded_session(&self, id: &str) -> Option<Arc<Mutex<Session>>> {
        lock(&self.sessions).get(id).cloned()
    }

    fn resolve_model(&self, model: &str) -> PathBuf {
        let p = Path::new(model);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.cfg.data_dir.join(p)
        }
    }
}

/// A poisoned lock only means another request panicked mid-read; the
/// session data itself is replaced atomically on every mutation.
fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/frames", get(list_frames))
        .route("/frames/{id}/cloud", get(get_cloud))
        .route("/frames/{id}/flood", post(flood))
        .route("/frames/{id}/toggle", post(toggle))
        .route("/frames/{id}/labels", put(save_labels))
        .route("/frames/{id}/prediction", get(prediction))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Serve until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

// ------------------------------------------------------------------ errors

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    fn stale(current: u64, sent: u64) -> Self {
        Self::new(StatusCode::CONFLICT, format!("stale revision {sent}; current revision is {current}"))
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Index { .. } | Error::Config(_) => StatusCode::BAD_REQUEST,
            Error::InvalidSeed { .. } | Error::EmptyFrame | Error::Malformed { .. } | Error::RingOverflow { .. } => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            Error::Format(_) | Error::Corruption(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            log::error!("{}", self.message);
        }
        (self.status, Json(ErrorBody { error: &self.message })).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

// ---------------------------------------------------------------- handlers

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSummary {
    pub frame_id: String,
    pub point_count: usize,
    pub labeled_fraction: f64,
}

async fn list_frames(State(state): State<Arc<AppState>>) -> ApiResult<Json<Vec<FrameSummary>>> {
    let mut out = Vec::new();
    for id in state.frame_ids() {
        let (point_count, labeled_fraction) = match state.loaded_session(id) {
            Some(s) => {
                let s = lock(&s);
                (s.cloud.len(), s.labels.labeled_fraction())
            }
            None => {
                let n = state.load_cloud(id)?.len();
                (n, state.load_labels(id, n)?.labeled_fraction())
            }
        };
        out.push(FrameSummary { frame_id: id.to_string(), point_count, labeled_fraction });
    }
    Ok(Json(out))
}

/// `GSC1`, u32 version, u32 point count, u32 revision (low 32 bits), then
/// XYZIR records, then one label byte per point.
pub fn cloud_stream(cloud: &PointCloud, labels: &PointLabels, revision: u64) -> Vec<u8> {
    let mut out = Vec::with_capacity(CLOUD_HEADER_LEN + 21 * cloud.len());
    out.extend_from_slice(CLOUD_MAGIC);
    out.extend_from_slice(&CLOUD_VERSION.to_le_bytes());
    out.extend_from_slice(&(cloud.len() as u32).to_le_bytes());
    out.extend_from_slice(&(revision as u32).to_le_bytes());
    out.extend_from_slice(&cloud.to_xyzir_bytes());
    out.extend_from_slice(&labels.body_bytes());
    out
}

async fn get_cloud(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let session = state.session(&id)?;
    let s = lock(&session);
    let body = cloud_stream(&s.cloud, &s.labels, s.revision);
    Ok(([(header::CONTENT_TYPE, "application/octet-stream")], body).into_response())
}

/// A seed as `[ring, column]` or `{"ring": r, "column": c}`.
#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(untagged)]
pub enum SeedJson {
    Pair(usize, usize),
    Named { ring: usize, column: usize },
}

impl From<SeedJson> for SeedPoint {
    fn from(s: SeedJson) -> Self {
        match s {
            SeedJson::Pair(ring, column) | SeedJson::Named { ring, column } => SeedPoint { ring, column },
        }
    }
}

#[derive(Debug, Deserialize, Serialize)]
pub struct FloodRequest {
    pub seeds: Vec<SeedJson>,
    pub t1: Option<f64>,
    pub t2: Option<f64>,
    pub revision: u64,
}

#[derive(Debug, Deserialize, Serialize)]
pub struct ToggleRequest {
    pub indices: Vec<usize>,
    pub value: Label,
    pub revision: u64,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
pub struct MutationResponse {
    pub changed_point_indices: Vec<usize>,
    pub new_revision: u64,
}

fn changed(before: &PointLabels, after: &PointLabels) -> Vec<usize> {
    (0..before.len()).filter(|&i| before.labels[i] != after.labels[i]).collect()
}

/// Check the revision, compute the new labels, then swap them in.
fn mutate(
    session: &Mutex<Session>,
    revision: u64,
    f: impl FnOnce(&Session) -> groundseg::Result<PointLabels>,
) -> ApiResult<MutationResponse> {
    let mut s = lock(session);
    if s.revision != revision {
        return Err(ApiError::stale(s.revision, revision));
    }
    let next = f(&s)?;
    let changed_point_indices = changed(&s.labels, &next);
    s.dirty |= !changed_point_indices.is_empty();
    s.labels = next;
    s.revision += 1;
    Ok(MutationResponse { changed_point_indices, new_revision: s.revision })
}

async fn flood(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<FloodRequest>,
) -> ApiResult<Json<MutationResponse>> {
    let session = state.session(&id)?;
    let defaults = FloodConfig::default();
    let cfg = FloodConfig { t1: req.t1.unwrap_or(defaults.t1), t2: req.t2.unwrap_or(defaults.t2) };
    let seeds: Vec<SeedPoint> = req.seeds.into_iter().map(SeedPoint::from).collect();
    mutate(&session, req.revision, |s| apply_seeds(&s.grid, &s.raw, &seeds, &cfg, &s.labels)).map(Json)
}

async fn toggle(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<ToggleRequest>,
) -> ApiResult<Json<MutationResponse>> {
    let session = state.session(&id)?;
    mutate(&session, req.revision, |s| toggle_points(&s.labels, &req.indices, req.value)).map(Json)
}

#[derive(Debug, Default, Deserialize, Serialize)]
pub struct SaveRequest {
    /// When present, the save is rejected unless it matches the session.
    pub revision: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
pub struct SaveResponse {
    pub revision: u64,
    pub point_count: usize,
}

async fn save_labels(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>, body: Bytes) -> ApiResult<Json<SaveResponse>> {
    let req: SaveRequest = if body.iter().all(u8::is_ascii_whitespace) {
        SaveRequest::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("invalid body: {e}")))?
    };
    let session = state.session(&id)?;
    let mut s = lock(&session);
    if let Some(r) = req.revision {
        if r != s.revision {
            return Err(ApiError::stale(s.revision, r));
        }
    }
    s.labels.save(state.label_path(&id))?;
    s.dirty = false;
    Ok(Json(SaveResponse { revision: s.revision, point_count: s.labels.len() }))
}

#[derive(Debug, Deserialize)]
struct PredictionQuery {
    model: String,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
pub struct PredictionResponse {
    pub frame_id: String,
    pub scores: Vec<f64>,
}

async fn prediction(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<PredictionQuery>,
) -> ApiResult<Json<PredictionResponse>> {
    let session = state.session(&id)?;
    let model_path = state.resolve_model(&q.model);
    if !model_path.is_file() {
        return Err(ApiError::not_found(format!("model {} not found", model_path.display())));
    }
    let (raw, grid) = {
        let s = lock(&session);
        (s.raw.clone(), s.grid.clone())
    };
    let encoder = state.cfg.encoder;
    let scores = tokio::task::spawn_blocking(move || -> groundseg::Result<Vec<f64>> {
        let net = load_model(&model_path)?;
        let probs = forward(&net, &normalize(&raw, &encoder)?)?;
        grid_to_point_probs(&probs, &grid)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(PredictionResponse { frame_id: id, scores }))
}
