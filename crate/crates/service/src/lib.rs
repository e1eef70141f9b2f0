//! JSON-over-HTTP session server for point-click teleoperation.
//!
//! Each session owns a plan, a pose, the demo being recorded and a live
//! memory proxy map. Operations on one session are serialized by its own
//! lock; sessions never share mutable state. Routes and payloads are listed
//! in `docs/api.md`.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use tokio::sync::{Mutex, RwLock};

use feudalnav_core::demos::{DemoFrame, DemoTrajectory};
use feudalnav_core::mpm::{MapVariant, MemoryMap, DEFAULT_CROP};
use feudalnav_core::waynet::{frame_vector, InputHistory, RayPredictor, WayNetModel};
use feudalnav_core::worker::act_deterministic;
use feudalnav_core::world::{step, Sensor};
use feudalnav_core::{Action, FloorPlan, Hlm, Observation, Pose, Waypoint};

mod image;

pub use image::{crop_pgm, strip_ppm, STRIP_HEIGHT};

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Internal(String),
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

impl ApiError {
    fn parts(&self) -> (StatusCode, &'static str) {
        match self {
            ApiError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            ApiError::BadRequest(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            ApiError::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
            ApiError::Internal(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code) = self.parts();
        let body = ErrorBody {
            code: code.into(),
            message: self.to_string(),
        };
        (status, Json(body)).into_response()
    }
}

impl From<feudalnav_core::Error> for ApiError {
    fn from(e: feudalnav_core::Error) -> Self {
        ApiError::Internal(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    HumanTeleop,
    AgentAutopilot,
}

/// Waypoint network driving autopilot sessions.
#[derive(Debug, Clone)]
pub struct Autopilot {
    pub waynet: WayNetModel,
}

pub struct Session {
    pub id: String,
    pub plan: FloorPlan,
    pub mode: Mode,
    pub seed: u64,
    pub pose: Pose,
    pub observation: Observation,
    pub frames: Vec<DemoFrame>,
    pub memory: MemoryMap,
    pub latent: [f64; 2],
    pub history: Option<InputHistory>,
    pub step: u64,
    pub closed: bool,
}

/// Shared server state: the plan catalogue, models and the session table.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    plans: HashMap<String, FloorPlan>,
    out_dir: PathBuf,
    sensor: Sensor,
    hlm: Hlm,
    autopilot: Option<Autopilot>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
}

impl AppState {
    /// Untrained high-level manager; good enough to visualize coverage.
    pub fn new(plans: Vec<FloorPlan>, out_dir: PathBuf) -> Self {
        let sensor = Sensor::default();
        let cfg = feudalnav_core::encoder::EncoderConfig {
            rays: sensor.rays,
            app_channels: sensor.app_channels,
            max_range: sensor.max_range,
            ..Default::default()
        };
        Self::with_models(plans, out_dir, sensor, Hlm::bootstrap(&cfg, 0), None)
    }

    pub fn with_models(plans: Vec<FloorPlan>, out_dir: PathBuf, sensor: Sensor, hlm: Hlm, autopilot: Option<Autopilot>) -> Self {
        Self {
            inner: Arc::new(Inner {
                plans: plans.into_iter().map(|p| (p.id.clone(), p)).collect(),
                out_dir,
                sensor,
                hlm,
                autopilot,
                sessions: RwLock::new(HashMap::new()),
            }),
        }
    }

    pub fn plan_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.inner.plans.keys().cloned().collect();
        ids.sort();
        ids
    }

    async fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.inner
            .sessions
            .read()
            .await
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("no session {id}")))
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CreateRequest {
    pub plan: String,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CreateResponse {
    pub id: String,
    pub plan: String,
    pub mode: Mode,
    pub rays: usize,
    pub step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseBody {
    pub x: f64,
    pub y: f64,
    pub heading_deg: f64,
}

impl From<Pose> for PoseBody {
    fn from(p: Pose) -> Self {
        Self {
            x: p.x,
            y: p.y,
            heading_deg: p.heading.degrees(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ViewResponse {
    pub step: u64,
    pub mode: Mode,
    pub pose: PoseBody,
    /// Base64 binary PPM, one column per ray.
    pub strip: String,
    /// Base64 8-bit binary PGM of the map crop around the current latent position.
    pub mpm: String,
    pub frames: usize,
    pub closed: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ClickRequest {
    pub ray: i64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StepResponse {
    pub step: u64,
    pub action: Action,
    /// Ray the action steered toward (the click, or the autopilot's waypoint).
    pub ray: usize,
    pub pose: PoseBody,
    pub strip: String,
    pub mpm: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FinalizeResponse {
    pub path: String,
    pub frames: usize,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/plans", get(list_plans))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/view", get(view))
        .route("/sessions/{id}/click", post(click))
        .route("/sessions/{id}/step", post(autopilot_step))
        .route("/sessions/{id}/finalize", post(finalize))
        .with_state(state)
}

pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

async fn list_plans(State(state): State<AppState>) -> Json<Vec<String>> {
    Json(state.plan_ids())
}

fn start_pose(plan: &FloorPlan, seed: u64) -> Pose {
    let turns = (seed % 24) as f64;
    Pose::new(plan.seed.x, plan.seed.y, (turns * 15.0).to_radians())
}

fn new_id() -> String {
    format!("{:032x}", rand::random::<u128>())
}

fn encode_views(state: &Inner, s: &Session) -> (String, String) {
    let strip = B64.encode(strip_ppm(&s.observation, state.sensor.max_range));
    let crop = s.memory.grid.crop(s.latent, DEFAULT_CROP, DEFAULT_CROP);
    (strip, B64.encode(crop_pgm(&crop)))
}

async fn create_session(State(state): State<AppState>, Json(req): Json<CreateRequest>) -> Result<(StatusCode, Json<CreateResponse>), ApiError> {
    let inner = &state.inner;
    let plan = inner
        .plans
        .get(&req.plan)
        .cloned()
        .ok_or_else(|| ApiError::NotFound(format!("unknown plan {}", req.plan)))?;
    let history = match (req.mode, &inner.autopilot) {
        (Mode::HumanTeleop, _) => None,
        (Mode::AgentAutopilot, Some(a)) => Some(a.waynet.history()),
        (Mode::AgentAutopilot, None) => return Err(ApiError::Conflict("server has no autopilot model loaded".into())),
    };
    let pose = start_pose(&plan, req.seed);
    let observation = inner.sensor.render(&plan, &pose);
    let latent = inner.hlm.latent(&observation)?;
    let mut memory = inner.hlm.memory(MapVariant::H, feudalnav_core::grouping::DEFAULT_ALPHA_C);
    memory.observe(latent, &observation);
    let id = new_id();
    let session = Session {
        id: id.clone(),
        plan,
        mode: req.mode,
        seed: req.seed,
        pose,
        observation,
        frames: Vec::new(),
        memory,
        latent,
        history,
        step: 0,
        closed: false,
    };
    let body = CreateResponse {
        id: id.clone(),
        plan: req.plan,
        mode: req.mode,
        rays: inner.sensor.rays,
        step: 0,
    };
    inner.sessions.write().await.insert(id, Arc::new(Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(body)))
}

async fn view(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<ViewResponse>, ApiError> {
    let handle = state.session(&id).await?;
    let s = handle.lock().await;
    let (strip, mpm) = encode_views(&state.inner, &s);
    Ok(Json(ViewResponse {
        step: s.step,
        mode: s.mode,
        pose: s.pose.into(),
        strip,
        mpm,
        frames: s.frames.len(),
        closed: s.closed,
    }))
}

/// Record the current frame with `ray` as its click, execute the
/// deterministic worker toward it and advance the session.
fn advance(state: &Inner, s: &mut Session, ray: usize) -> Result<StepResponse, ApiError> {
    let wp = Waypoint::at(&s.observation, ray);
    let action = act_deterministic(&s.observation, &wp);
    s.frames.push(DemoFrame {
        observation: s.observation.clone(),
        click: ray,
        action,
        pose: s.pose,
    });
    s.pose = step(&s.plan, &s.pose, action);
    s.observation = state.sensor.render(&s.plan, &s.pose);
    s.latent = state.hlm.latent(&s.observation)?;
    s.memory.observe(s.latent, &s.observation);
    s.step += 1;
    let (strip, mpm) = encode_views(state, s);
    Ok(StepResponse {
        step: s.step,
        action,
        ray,
        pose: s.pose.into(),
        strip,
        mpm,
    })
}

fn ensure_open(s: &Session) -> Result<(), ApiError> {
    if s.closed {
        return Err(ApiError::Conflict(format!("session {} is finalized", s.id)));
    }
    Ok(())
}

async fn click(State(state): State<AppState>, Path(id): Path<String>, Json(req): Json<ClickRequest>) -> Result<Json<StepResponse>, ApiError> {
    let handle = state.session(&id).await?;
    let mut s = handle.lock().await;
    ensure_open(&s)?;
    if s.mode != Mode::HumanTeleop {
        return Err(ApiError::Conflict("clicks are only accepted in human_teleop mode".into()));
    }
    let rays = state.inner.sensor.rays;
    let ray = usize::try_from(req.ray)
        .ok()
        .filter(|&r| r < rays)
        .ok_or_else(|| ApiError::BadRequest(format!("ray {} outside [0, {rays})", req.ray)))?;
    Ok(Json(advance(&state.inner, &mut s, ray)?))
}

async fn autopilot_step(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<StepResponse>, ApiError> {
    let handle = state.session(&id).await?;
    let mut s = handle.lock().await;
    ensure_open(&s)?;
    let (Mode::AgentAutopilot, Some(pilot)) = (s.mode, &state.inner.autopilot) else {
        return Err(ApiError::Conflict("steps are only accepted in agent_autopilot mode".into()));
    };
    let net = &pilot.waynet;
    let crop = net.variant.uses_map().then(|| s.memory.grid.crop(s.latent, DEFAULT_CROP, DEFAULT_CROP));
    let frame = frame_vector(net.variant, &s.observation, crop.as_ref(), net.max_range);
    let history = s.history.as_mut().expect("autopilot sessions keep a history");
    history.push(frame);
    let input = history.input();
    let probs = net.ray_probabilities(&input);
    let ray = probs
        .iter()
        .enumerate()
        .fold(0, |best, (i, &p)| if p > probs[best] { i } else { best });
    Ok(Json(advance(&state.inner, &mut s, ray)?))
}

async fn finalize(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<FinalizeResponse>, ApiError> {
    let handle = state.session(&id).await?;
    let mut s = handle.lock().await;
    ensure_open(&s)?;
    if s.frames.is_empty() {
        return Err(ApiError::Conflict("session has no recorded frames".into()));
    }
    let center = state.inner.sensor.rays / 2;
    let mut frames = s.frames.clone();
    frames.push(DemoFrame {
        observation: s.observation.clone(),
        click: center,
        action: Action::Stop,
        pose: s.pose,
    });
    let demo = DemoTrajectory {
        plan: s.plan.clone(),
        frames,
        collector: format!("session-{}", s.id),
        seed: s.seed,
        timestamp: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    let dir = &state.inner.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| ApiError::Internal(e.to_string()))?;
    let path = dir.join(format!("{}-{}.fdnv", s.plan.id, s.id));
    demo.save(&path)?;
    s.closed = true;
    Ok(Json(FinalizeResponse {
        path: path.display().to_string(),
        frames: demo.frames.len(),
    }))
}
