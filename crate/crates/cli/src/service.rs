//! HTTP authoring service.
//!
//! Sessions live behind one lock per id, so edits and renders of a session
//! are serialized while different sessions proceed independently.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post, put};
use axum::{Json, Router};
use gabor_fields::render::Camera;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Mutex;

use crate::commands::parse_axis;
use crate::session::{Edit, Outcome, PrimitivePatch, Session, SessionError};
use crate::views;

pub const MAX_PREVIEW_PIXELS: usize = 4096 * 4096;

#[derive(Clone, Default)]
pub struct AppState {
    sessions: Arc<RwLock<HashMap<String, Arc<Mutex<Session>>>>>,
    dir: Option<PathBuf>,
}

impl AppState {
    pub fn in_memory() -> Self {
        AppState::default()
    }

    /// State persisted under `dir`: every `<id>.json` edit log found there is replayed.
    pub fn open(dir: Option<PathBuf>) -> std::io::Result<Self> {
        let mut state = AppState { dir: dir.clone(), ..Default::default() };
        let Some(dir) = dir else { return Ok(state) };
        std::fs::create_dir_all(&dir)?;
        let mut map = HashMap::new();
        for entry in std::fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.extension().is_none_or(|e| e != "json") {
                continue;
            }
            let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            let log: Vec<Edit> = serde_json::from_slice(&std::fs::read(&path)?)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
            let s = Session::replay(id.clone(), &log)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))?;
            map.insert(id, Arc::new(Mutex::new(s)));
        }
        state.sessions = Arc::new(RwLock::new(map));
        Ok(state)
    }

    fn get(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.sessions
            .read()
            .expect("session map lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown session {id}")))
    }

    fn persist(&self, s: &Session) -> Result<(), ApiError> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let body = serde_json::to_vec(s.log()).map_err(|e| ApiError::internal(e.to_string()))?;
        std::fs::write(dir.join(format!("{}.json", s.id)), body).map_err(|e| ApiError::internal(e.to_string()))
    }
}

#[derive(Debug, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn not_found(message: String) -> Self {
        ApiError { status: StatusCode::NOT_FOUND, code: "not_found", message }
    }

    fn invalid(message: String) -> Self {
        ApiError { status: StatusCode::UNPROCESSABLE_ENTITY, code: "invalid", message }
    }

    fn internal(message: String) -> Self {
        ApiError { status: StatusCode::INTERNAL_SERVER_ERROR, code: "render_failed", message }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::UnknownPrimitive(_) => ApiError::not_found(e.to_string()),
            SessionError::Field(_) => ApiError::internal(e.to_string()),
            _ => ApiError::invalid(e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self)).into_response()
    }
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::invalid(format!("malformed body: {e}")))
}

fn outcome_json(o: &Outcome) -> serde_json::Value {
    match o {
        Outcome::Added(ids) => json!({ "ids": ids }),
        Outcome::Patched(id, p) => json!({ "id": id, "primitive": p }),
        Outcome::Deleted(id) => json!({ "deleted": id }),
        Outcome::Camera(c) => json!({ "camera": c }),
    }
}

async fn edit(state: &AppState, id: &str, e: Edit) -> Result<Json<serde_json::Value>, ApiError> {
    let s = state.get(id)?;
    let mut s = s.lock().await;
    let o = s.apply(e)?;
    state.persist(&s)?;
    Ok(Json(outcome_json(&o)))
}

#[derive(Deserialize)]
struct CreateBody {
    #[serde(default)]
    log: Vec<Edit>,
}

async fn create(State(state): State<AppState>, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let log = if body.is_empty() { Vec::new() } else { parse_body::<CreateBody>(&body)?.log };
    let id = uuid::Uuid::new_v4().simple().to_string();
    let s = Session::replay(id.clone(), &log)?;
    state.persist(&s)?;
    state.sessions.write().expect("session map lock").insert(id.clone(), Arc::new(Mutex::new(s)));
    Ok((StatusCode::CREATED, Json(json!({ "id": id }))))
}

async fn summary(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<serde_json::Value>, ApiError> {
    let s = state.get(&id)?;
    let mut s = s.lock().await;
    let f = s.field()?;
    Ok(Json(json!({
        "id": id,
        "edits": s.log().len(),
        "primitives": f.len(),
        "gabors": f.gabor_count(),
        "levels": f.level_count(),
        "bins": f.bin_count(),
        "level_counts": f.level_counts(),
        "cutoffs": f.cutoffs(),
        "camera": s.camera(),
    })))
}

async fn log(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<Vec<Edit>>, ApiError> {
    let s = state.get(&id)?;
    let s = s.lock().await;
    Ok(Json(s.log().to_vec()))
}

async fn add_chunk(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> Result<Json<serde_json::Value>, ApiError> {
    edit(&state, &id, Edit::Chunk { params: parse_body(&body)? }).await
}

async fn add_tree(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> Result<Json<serde_json::Value>, ApiError> {
    edit(&state, &id, Edit::Tree { params: parse_body(&body)? }).await
}

async fn patch_primitive(
    State(state): State<AppState>,
    Path((id, pid)): Path<(String, usize)>,
    body: Bytes,
) -> Result<Json<serde_json::Value>, ApiError> {
    let patch: PrimitivePatch = parse_body(&body)?;
    edit(&state, &id, Edit::Patch { pid, patch }).await
}

async fn delete_primitive(
    State(state): State<AppState>,
    Path((id, pid)): Path<(String, usize)>,
) -> Result<Json<serde_json::Value>, ApiError> {
    edit(&state, &id, Edit::Delete { pid }).await
}

async fn set_camera(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> Result<Json<serde_json::Value>, ApiError> {
    let camera: Camera = parse_body(&body)?;
    edit(&state, &id, Edit::Camera { camera }).await
}

#[derive(Deserialize)]
struct PreviewQuery {
    w: Option<usize>,
    h: Option<usize>,
    lod_max_freq: Option<f64>,
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, HeaderValue::from_static("image/png"))], bytes).into_response()
}

async fn preview(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<PreviewQuery>,
) -> Result<Response, ApiError> {
    let (w, h) = (q.w.unwrap_or(256), q.h.unwrap_or(256));
    if w == 0 || h == 0 || w * h > MAX_PREVIEW_PIXELS {
        return Err(ApiError::invalid(format!("preview size {w}x{h} out of range")));
    }
    if q.lod_max_freq.is_some_and(|f| !(f >= 0.0)) {
        return Err(ApiError::invalid("lod_max_freq must be nonnegative".into()));
    }
    let s = state.get(&id)?;
    // hold the session for the whole render so renders queue per session
    let mut s = s.lock().await;
    let field = s.field()?;
    let camera = s.camera();
    let out = tokio::task::spawn_blocking(move || {
        let r = views::preview(&field, camera, w, h, q.lod_max_freq).map_err(|e| ApiError::internal(e.to_string()))?;
        let count = match q.lod_max_freq {
            Some(f) => field.prune_to_max_frequency(f).kept(),
            None => field.len(),
        };
        let bytes = r.image.png_bytes(0.0).map_err(|e| ApiError::internal(e.to_string()))?;
        Ok::<_, ApiError>((bytes, count, r.seconds))
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))??;
    drop(s);
    let mut resp = png(out.0);
    let headers = resp.headers_mut();
    headers.insert("x-primitive-count", HeaderValue::from(out.1));
    headers.insert("x-render-ms", HeaderValue::from((out.2 * 1000.0).round() as u64));
    Ok(resp)
}

async fn export(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let s = state.get(&id)?;
    let bytes = s.lock().await.export()?;
    Ok(([(header::CONTENT_TYPE, HeaderValue::from_static("application/octet-stream"))], bytes).into_response())
}

#[derive(Deserialize)]
struct SpectrumQuery {
    axis: Option<String>,
    n: Option<usize>,
}

async fn spectrum(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<SpectrumQuery>,
) -> Result<Response, ApiError> {
    let axis_name = q.axis.unwrap_or_else(|| "z".into());
    let axis = parse_axis(&axis_name).ok_or_else(|| ApiError::invalid(format!("unknown axis {axis_name}")))?;
    let n = q.n.unwrap_or(32);
    if !(8..=128).contains(&n) {
        return Err(ApiError::invalid(format!("n must lie in 8..=128, got {n}")));
    }
    let s = state.get(&id)?;
    let field = s.lock().await.field()?;
    let bytes = tokio::task::spawn_blocking(move || views::spectrum_slice(&field, n, axis).png_bytes(0.0))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(png(bytes))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/session", post(create))
        .route("/session/{id}", get(summary))
        .route("/session/{id}/log", get(log))
        .route("/session/{id}/chunk", post(add_chunk))
        .route("/session/{id}/tree", post(add_tree))
        .route("/session/{id}/primitive/{pid}", patch(patch_primitive).delete(delete_primitive))
        .route("/session/{id}/camera", put(set_camera))
        .route("/session/{id}/preview", get(preview))
        .route("/session/{id}/export", get(export))
        .route("/session/{id}/spectrum", get(spectrum))
        .with_state(state)
}
