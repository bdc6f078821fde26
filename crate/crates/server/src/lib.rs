//! Session-oriented HTTP reward service.
//!
//! A session owns one embedded guidance clip and one reward configuration.
//! Clients reset it with the episode's initial frame, then post every
//! observation (a frame, or a latent computed elsewhere) and receive the full
//! reward breakdown. Bodies are JSON; frames travel as base64 of the
//! single-frame "DEGC" record.

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use deg_core::error::DegError;
use deg_core::frame::Frame;
use deg_core::guidance::{decode_clip, decode_frame, load_clip, GuidanceClip};
use deg_core::latent::{load_encoder, EncoderParams};
use deg_core::reward::{step_reward, EpisodeRewardState, GuidanceEmbeddings, RewardBreakdown, RewardConfig};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime};
use tokio::net::TcpListener;
use tokio::sync::Mutex;
use uuid::Uuid;

/// Environment variable naming the encoder checkpoint.
pub const ENCODER_ENV: &str = "DEG_ENCODER_PATH";
pub const DEFAULT_IDLE_TIMEOUT: Duration = Duration::from_secs(600);

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error("no encoder checkpoint: pass --encoder or set {ENCODER_ENV}")]
    MissingEncoder,

    #[error("cannot load encoder {path}: {source}")]
    Encoder { path: PathBuf, source: DegError },

    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Picks the encoder path from an explicit flag, falling back to the
/// environment.
pub fn encoder_path(flag: Option<PathBuf>) -> Result<PathBuf, ServerError> {
    flag.or_else(|| std::env::var_os(ENCODER_ENV).map(PathBuf::from)).ok_or(ServerError::MissingEncoder)
}

pub fn load_service_encoder(path: &std::path::Path) -> Result<EncoderParams<f32>, ServerError> {
    load_encoder(path).map_err(|source| ServerError::Encoder { path: path.to_path_buf(), source })
}

pub struct Session {
    pub config: RewardConfig,
    pub guidance: GuidanceEmbeddings<f64>,
    pub episode: Option<EpisodeRewardState<f64>>,
    pub created_at: SystemTime,
    pub last_used: Instant,
}

/// Shared server state: the read-only encoder and the session store.
#[derive(Clone)]
pub struct AppState {
    pub encoder: Arc<EncoderParams<f32>>,
    sessions: Arc<std::sync::Mutex<HashMap<Uuid, Arc<Mutex<Session>>>>>,
    pub idle_timeout: Duration,
}

impl AppState {
    pub fn new(encoder: EncoderParams<f32>, idle_timeout: Duration) -> Self {
        Self { encoder: Arc::new(encoder), sessions: Arc::default(), idle_timeout }
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().expect("session store poisoned").len()
    }

    fn get(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        let id = Uuid::parse_str(id).map_err(|_| ApiError::not_found())?;
        self.sessions.lock().expect("session store poisoned").get(&id).cloned().ok_or_else(ApiError::not_found)
    }

    /// Drops sessions idle for longer than the timeout. Sessions in use are
    /// skipped.
    pub fn expire_idle(&self) -> usize {
        let now = Instant::now();
        let mut map = self.sessions.lock().expect("session store poisoned");
        let before = map.len();
        map.retain(|_, s| match s.try_lock() {
            Ok(s) => now.duration_since(s.last_used) <= self.idle_timeout,
            Err(_) => true,
        });
        before - map.len()
    }
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ErrorBody {
    pub error: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub field: Option<String>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, msg: impl Into<String>) -> Self {
        Self { status, body: ErrorBody { error: msg.into(), field: None } }
    }

    fn bad_request(msg: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, msg)
    }

    fn not_found() -> Self {
        Self::new(StatusCode::NOT_FOUND, "unknown session")
    }

    fn from_core(e: DegError) -> Self {
        match e {
            DegError::InvalidConfig { field, reason } => Self {
                status: StatusCode::UNPROCESSABLE_ENTITY,
                body: ErrorBody { error: format!("{field}: {reason}"), field: Some(field) },
            },
            other => Self::bad_request(other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed body: {e}")))
}

/// `POST /v1/sessions` body. Exactly one of `clip` (base64 "DEGC") and
/// `clip_path` must be set; `config` defaults to the standard weights.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    #[serde(default)]
    pub config: Option<serde_json::Value>,
    #[serde(default)]
    pub clip: Option<String>,
    #[serde(default)]
    pub clip_path: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct SessionCreated {
    pub session_id: String,
}

/// An observation: a base64 frame or a raw latent.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationBody {
    #[serde(default)]
    pub frame: Option<String>,
    #[serde(default)]
    pub latent: Option<Vec<f64>>,
    #[serde(default)]
    pub sparse: bool,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ResetReply {
    pub i_target: usize,
    pub i_reached: usize,
    pub prev_sim: f64,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Deleted {
    pub deleted: bool,
}

pub fn frame_payload(frame: &Frame) -> String {
    B64.encode(deg_core::guidance::encode_frame(frame))
}

pub fn clip_payload(clip: &GuidanceClip) -> String {
    B64.encode(deg_core::guidance::encode_clip(clip))
}

fn decode_b64(s: &str, what: &str) -> Result<Vec<u8>, ApiError> {
    B64.decode(s.trim()).map_err(|e| ApiError::bad_request(format!("{what}: bad base64: {e}")))
}

async fn create_session(State(app): State<AppState>, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let req: CreateSession = parse_body(&body)?;
    let config: RewardConfig = match req.config {
        Some(v) => serde_json::from_value(v).map_err(|e| ApiError::bad_request(format!("config: {e}")))?,
        None => RewardConfig::default(),
    };
    config.validate().map_err(ApiError::from_core)?;
    let clip = match (req.clip, req.clip_path) {
        (Some(b), None) => decode_clip(&decode_b64(&b, "clip")?).map_err(|e| ApiError::bad_request(format!("clip: {e}")))?,
        (None, Some(p)) => load_clip(&p).map_err(|e| ApiError::bad_request(format!("clip_path: {e}")))?,
        _ => return Err(ApiError::bad_request("set exactly one of `clip` and `clip_path`")),
    };
    for f in &clip.frames {
        app.encoder.check_frame(f).map_err(|e| ApiError::bad_request(format!("clip: {e}")))?;
    }
    let guidance = GuidanceEmbeddings::<f64>::encode(&clip, &app.encoder).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let id = Uuid::new_v4();
    let session =
        Session { config, guidance, episode: None, created_at: SystemTime::now(), last_used: Instant::now() };
    app.sessions.lock().expect("session store poisoned").insert(id, Arc::new(Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(SessionCreated { session_id: id.to_string() })))
}

fn observation_latent(app: &AppState, obs: &ObservationBody, dim: usize) -> Result<Vec<f64>, ApiError> {
    match (&obs.frame, &obs.latent) {
        (Some(f), None) => {
            let frame = decode_frame(&decode_b64(f, "frame")?).map_err(|e| ApiError::bad_request(format!("frame: {e}")))?;
            let z = app.encoder.encode(&frame).map_err(|e| ApiError::bad_request(format!("frame: {e}")))?;
            Ok(z.cast::<f64>().0)
        }
        (None, Some(z)) => {
            if z.len() != dim {
                return Err(ApiError::bad_request(format!("latent has {} entries, expected {dim}", z.len())));
            }
            Ok(z.clone())
        }
        _ => Err(ApiError::bad_request("set exactly one of `frame` and `latent`")),
    }
}

async fn reset_episode(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<ResetReply>, ApiError> {
    let session = app.get(&id)?;
    let obs: ObservationBody = parse_body(&body)?;
    let mut s = session.lock().await;
    let z = observation_latent(&app, &obs, s.guidance.dim())?;
    let ep = EpisodeRewardState::begin(s.guidance.clone(), &z).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let reply = ResetReply { i_target: ep.i_target, i_reached: ep.i_reached, prev_sim: ep.prev_sim };
    s.episode = Some(ep);
    s.last_used = Instant::now();
    Ok(Json(reply))
}

async fn step_episode(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<RewardBreakdown<f64>>, ApiError> {
    let session = app.get(&id)?;
    let obs: ObservationBody = parse_body(&body)?;
    let mut guard = session.lock().await;
    let s = &mut *guard;
    s.last_used = Instant::now();
    let dim = s.guidance.dim();
    let Some(ep) = s.episode.as_mut() else {
        return Err(ApiError::new(StatusCode::CONFLICT, "no active episode: reset first"));
    };
    let z = observation_latent(&app, &obs, dim)?;
    let b = step_reward(ep, &z, obs.sparse, &s.config).map_err(|e| ApiError::bad_request(e.to_string()))?;
    Ok(Json(b))
}

async fn delete_session(State(app): State<AppState>, Path(id): Path<String>) -> Json<Deleted> {
    if let Ok(id) = Uuid::parse_str(&id) {
        app.sessions.lock().expect("session store poisoned").remove(&id);
    }
    Json(Deleted { deleted: true })
}

async fn healthz() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/healthz", get(healthz))
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}", axum::routing::delete(delete_session))
        .route("/v1/sessions/{id}/reset", post(reset_episode))
        .route("/v1/sessions/{id}/step", post(step_episode))
        .with_state(state)
}

pub async fn bind(port: u16) -> Result<TcpListener, ServerError> {
    let addr = SocketAddr::from(([127, 0, 0, 1], port));
    TcpListener::bind(addr).await.map_err(|source| ServerError::Bind { addr, source })
}

/// Serves until `shutdown` resolves, sweeping idle sessions in the
/// background.
pub async fn serve(listener: TcpListener, state: AppState, shutdown: impl Future<Output = ()> + Send + 'static) -> Result<(), ServerError> {
    let sweeper = state.clone();
    let period = (state.idle_timeout / 4).clamp(Duration::from_millis(50), Duration::from_secs(30));
    let task = tokio::spawn(async move {
        let mut tick = tokio::time::interval(period);
        loop {
            tick.tick().await;
            let n = sweeper.expire_idle();
            if n > 0 {
                log::info!("expired {n} idle sessions");
            }
        }
    });
    let res = axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await;
    task.abort();
    res.map_err(ServerError::Io)
}
