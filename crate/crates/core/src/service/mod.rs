//! HTTP service for live runs: start and inspect runs, stream frames and
//! reasoning events over SSE, accept passenger guidance.
//!
//! Each run steps on its own thread. Handlers talk to it only through a
//! control channel (guidance, pause, speed) and read what it publishes.

pub mod frame;

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::{broadcast, oneshot, watch};

use crate::guidance::{GuidanceError, GuidanceSource, MAX_GUIDANCE_CHARS};
use crate::harness::{load_scenario_file, write_outputs, Episode, EpisodeSettings, GuidanceEntry, TimedGuidance};
use crate::metrics::{aggregate, score_run, MetricsConfig, RunMetrics};
use crate::reasoning::{LatencyModel, LlmBackend, LlmConfig, Prompts, ReasoningBackend, RuleOracle};
use crate::recovery::{RecoveryConfig, Responder, SolverStatus};
use crate::trace::{EndReason, RecoveryMode, Trace};
use crate::world::scenario::{build, ScenarioDoc};
use crate::world::Scenario;

pub use frame::{Frame, PlanEvent, StreamEvent};

pub const DEFAULT_PORT: u16 = 8311;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Directory of bundled `.scn` files, addressed by file stem.
    pub scenario_dir: PathBuf,
    /// Where finished runs write their trace and metrics.
    pub output: Option<PathBuf>,
    /// Runs that may be active at once.
    pub max_active: usize,
    pub llm: Option<LlmConfig>,
    pub metrics: MetricsConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            scenario_dir: PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios")),
            output: None,
            max_active: 2,
            llm: None,
            metrics: MetricsConfig::default(),
        }
    }
}

/// Body of `POST /runs`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRun {
    /// Bundled scenario name.
    #[serde(default)]
    pub scenario: Option<String>,
    /// Uploaded scenario document, instead of a bundled name.
    #[serde(default)]
    pub document: Option<ScenarioDoc>,
    #[serde(default = "default_recovery")]
    pub recovery: RecoveryMode,
    #[serde(default)]
    pub latency: Option<LatencyModel>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub lockstep: Option<bool>,
    /// Simulated seconds per wall second; 0 runs unpaced.
    #[serde(default = "default_speed")]
    pub speed: f64,
    #[serde(default)]
    pub guidance: Vec<GuidanceEntry>,
}

fn default_recovery() -> RecoveryMode {
    RecoveryMode::Oracle
}

fn default_speed() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunState {
    Running,
    Paused,
    Finished,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunInfo {
    pub run_id: String,
    pub scenario: String,
    pub recovery: RecoveryMode,
    pub state: RunState,
    pub tick: u64,
    pub t: f64,
    pub speed: f64,
    pub status: SolverStatus,
    pub end: Option<EndReason>,
    pub metrics: Option<RunMetrics>,
}

enum Control {
    Guidance { text: String, reply: oneshot::Sender<Result<f64, GuidanceError>> },
    Pause,
    Resume,
    Speed(f64),
}

struct RunHandle {
    info: Arc<Mutex<RunInfo>>,
    control: Mutex<mpsc::Sender<Control>>,
    frames: watch::Receiver<Option<Frame>>,
    /// Dropped by the run thread when it finishes.
    events: Arc<Mutex<Option<broadcast::Sender<StreamEvent>>>>,
}

struct AppState {
    config: ServiceConfig,
    backend: Arc<dyn ReasoningBackend>,
    llm: Option<Arc<dyn ReasoningBackend>>,
    runs: Mutex<BTreeMap<String, Arc<RunHandle>>>,
    counter: Mutex<u64>,
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("{0}")]
    BadRequest(String),
    #[error("run {0} not found")]
    NotFound(String),
    #[error("too many active runs (limit {0})")]
    Conflict(usize),
    #[error("run {0} has finished")]
    Gone(String),
    #[error("{0}")]
    Unprocessable(String),
    #[error("{0}")]
    Internal(String),
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let code = match &self {
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::Gone(_) => StatusCode::GONE,
            ServiceError::Unprocessable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (code, Json(json!({"error": self.to_string()}))).into_response()
    }
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

pub fn router(config: ServiceConfig) -> Result<Router, ServiceError> {
    let llm: Option<Arc<dyn ReasoningBackend>> = match &config.llm {
        Some(c) => Some(Arc::new(LlmBackend::new(c.clone()).map_err(|e| ServiceError::Internal(e.to_string()))?)),
        None => None,
    };
    let state = Arc::new(AppState {
        config,
        backend: Arc::new(RuleOracle::default()),
        llm,
        runs: Mutex::new(BTreeMap::new()),
        counter: Mutex::new(0),
    });
    Ok(Router::new()
        .route("/runs", post(create_run).get(list_runs))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/stream", get(stream_run))
        .route("/runs/{id}/guidance", post(post_guidance))
        .route("/runs/{id}/pause", post(pause_run))
        .route("/runs/{id}/resume", post(resume_run))
        .route("/runs/{id}/speed", post(speed_run))
        .with_state(state))
}

fn resolve_scenario(state: &AppState, req: &CreateRun) -> Result<Scenario, ServiceError> {
    match (&req.scenario, &req.document) {
        (Some(name), None) => {
            if !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') || name.is_empty() {
                return Err(ServiceError::BadRequest(format!("invalid scenario name {name:?}")));
            }
            let path = state.config.scenario_dir.join(format!("{name}.scn"));
            if !path.is_file() {
                return Err(ServiceError::BadRequest(format!("unknown scenario {name:?}")));
            }
            load_scenario_file(&path).map_err(|e| ServiceError::BadRequest(e.to_string()))
        }
        (None, Some(doc)) => build(doc.clone()).map_err(|e| ServiceError::BadRequest(e.to_string())),
        _ => Err(ServiceError::BadRequest("give exactly one of scenario or document".into())),
    }
}

async fn create_run(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<serde_json::Value>, ServiceError> {
    let req: CreateRun = serde_json::from_slice(&body).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
    if !(req.speed >= 0.0 && req.speed.is_finite()) {
        return Err(ServiceError::BadRequest("speed must be a non-negative number".into()));
    }
    let scenario = resolve_scenario(&state, &req)?;
    let backend = match req.recovery {
        RecoveryMode::Off => None,
        RecoveryMode::Oracle => Some(state.backend.clone()),
        RecoveryMode::Llm => Some(
            state.llm.clone().ok_or_else(|| ServiceError::BadRequest("service has no llm backend configured".into()))?,
        ),
    };

    let mut runs = lock(&state.runs);
    let active = runs.values().filter(|r| lock(&r.info).state != RunState::Finished).count();
    if active >= state.config.max_active {
        return Err(ServiceError::Conflict(state.config.max_active));
    }
    let run_id = {
        let mut c = lock(&state.counter);
        *c += 1;
        format!("run-{}-{}", *c, scenario.name())
    };
    let defaults = RecoveryConfig::default();
    let settings = EpisodeSettings {
        recovery_config: RecoveryConfig {
            latency: req.latency.unwrap_or(defaults.latency),
            lockstep: req.lockstep.unwrap_or(defaults.lockstep),
            ..defaults
        },
        seed: req.seed,
        prompts: Arc::new(Prompts::default()),
        penalties: state.config.metrics.penalties,
        ..EpisodeSettings::new(run_id.clone(), req.recovery)
    };
    let script = req
        .guidance
        .iter()
        .filter(|g| g.scenario.as_deref().is_none_or(|s| s == scenario.name()))
        .map(|g| TimedGuidance { at: g.at, text: g.text.clone(), source: GuidanceSource::Script })
        .collect();
    let episode = Episode::new(&scenario, settings, backend.map(Responder::Live), script)
        .map_err(|e| ServiceError::BadRequest(e.to_string()))?;

    let info = Arc::new(Mutex::new(RunInfo {
        run_id: run_id.clone(),
        scenario: scenario.name().to_string(),
        recovery: req.recovery,
        state: RunState::Running,
        tick: 0,
        t: 0.0,
        speed: req.speed,
        status: SolverStatus::Idle,
        end: None,
        metrics: None,
    }));
    let (ctl_tx, ctl_rx) = mpsc::channel();
    let (frame_tx, frame_rx) = watch::channel(None);
    let (ev_tx, _) = broadcast::channel(1024);
    let events = Arc::new(Mutex::new(Some(ev_tx.clone())));
    let handle = Arc::new(RunHandle { info: info.clone(), control: Mutex::new(ctl_tx), frames: frame_rx, events: events.clone() });
    runs.insert(run_id.clone(), handle);
    drop(runs);

    let loop_ctx = RunLoop {
        episode,
        info,
        control: ctl_rx,
        frames: frame_tx,
        events: ev_tx,
        shared_events: events,
        speed: req.speed,
        output: state.config.output.clone(),
        metrics: state.config.metrics,
    };
    std::thread::Builder::new()
        .name(run_id.clone())
        .spawn(move || loop_ctx.run())
        .map_err(|e| ServiceError::Internal(e.to_string()))?;
    Ok(Json(json!({"run_id": run_id, "state": "running"})))
}

struct RunLoop {
    episode: Episode,
    info: Arc<Mutex<RunInfo>>,
    control: mpsc::Receiver<Control>,
    frames: watch::Sender<Option<Frame>>,
    events: broadcast::Sender<StreamEvent>,
    shared_events: Arc<Mutex<Option<broadcast::Sender<StreamEvent>>>>,
    speed: f64,
    output: Option<PathBuf>,
    metrics: MetricsConfig,
}

impl RunLoop {
    fn handle(&mut self, msg: Control, paused: &mut bool) {
        match msg {
            Control::Guidance { text, reply } => {
                let r = self.episode.guide(&text, GuidanceSource::Service);
                if let Ok(m) = &r {
                    let _ = self.events.send(StreamEvent::Guidance(m.clone()));
                }
                let _ = reply.send(r.map(|m| m.received));
            }
            Control::Pause => *paused = true,
            Control::Resume => *paused = false,
            Control::Speed(s) => self.speed = s,
        }
        let mut info = lock(&self.info);
        info.state = if *paused { RunState::Paused } else { RunState::Running };
        info.speed = self.speed;
    }

    fn run(mut self) {
        let mut paused = false;
        let mut replanned = false;
        let started = Instant::now();
        let mut next = Instant::now();
        loop {
            while let Ok(msg) = self.control.try_recv() {
                self.handle(msg, &mut paused);
            }
            if paused {
                match self.control.recv_timeout(Duration::from_millis(50)) {
                    Ok(msg) => self.handle(msg, &mut paused),
                    Err(mpsc::RecvTimeoutError::Timeout) => {}
                    Err(mpsc::RecvTimeoutError::Disconnected) => paused = false,
                }
                next = Instant::now();
                continue;
            }
            let report = self.episode.step();
            for g in &report.guidance {
                let _ = self.events.send(StreamEvent::Guidance(g.clone()));
            }
            if let Some(rec) = &report.reasoning {
                let _ = self.events.send(StreamEvent::Reasoning(rec.clone()));
            }
            if let Some((plan_id, plan)) = &report.installed {
                replanned |= plan.route_replanning;
                let _ = self.events.send(StreamEvent::Plan(PlanEvent {
                    plan_id: *plan_id,
                    tick: report.tick.tick,
                    plan: plan.clone(),
                    route: frame::route_polyline(&self.episode),
                }));
            }
            let f = Frame::capture(&self.episode, replanned);
            // the world is not stepped on the final tick, so its frame repeats the last one
            let repeat = self.frames.borrow().as_ref().is_some_and(|prev| prev.tick == f.tick);
            {
                let mut info = lock(&self.info);
                info.tick = report.tick.tick;
                info.t = report.tick.t;
                info.status = report.status;
            }
            if !repeat {
                self.frames.send_replace(Some(f));
            }
            if report.end.is_some() {
                break;
            }
            if self.speed > 0.0 {
                next += Duration::from_secs_f64(self.episode.world().dt / self.speed);
                let now = Instant::now();
                if next > now {
                    std::thread::sleep(next - now);
                } else {
                    next = now;
                }
            }
        }
        self.finish(started);
    }

    fn finish(self, started: Instant) {
        let end = self.episode.end();
        let lines = self.episode.into_lines();
        let metrics = Trace::from_lines(lines.clone())
            .ok()
            .and_then(|t| score_run(&t, &self.metrics).ok())
            .map(|mut m| {
                m.wall_duration = Some(started.elapsed().as_secs_f64());
                m
            });
        if let (Some(dir), Some(m)) = (&self.output, &metrics) {
            let run_id = lock(&self.info).run_id.clone();
            let run = crate::harness::RunResult { lines, metrics: m.clone() };
            if let Ok(report) = aggregate(&run_id, std::slice::from_ref(m)) {
                if let Err(e) = write_outputs(&dir.join(&run_id), std::slice::from_ref(&run), &report) {
                    log::error!("writing run output: {e}");
                }
            }
        }
        {
            let mut info = lock(&self.info);
            info.state = RunState::Finished;
            info.end = end;
            info.status = SolverStatus::Idle;
            info.metrics = metrics.clone();
        }
        if let Some(m) = metrics {
            let _ = self.events.send(StreamEvent::MetricsFinal(m));
        }
        lock(&self.shared_events).take();
    }
}

async fn list_runs(State(state): State<Arc<AppState>>) -> Json<Vec<RunInfo>> {
    Json(lock(&state.runs).values().map(|r| lock(&r.info).clone()).collect())
}

fn handle(state: &AppState, id: &str) -> Result<Arc<RunHandle>, ServiceError> {
    lock(&state.runs).get(id).cloned().ok_or_else(|| ServiceError::NotFound(id.to_string()))
}

async fn get_run(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<serde_json::Value>, ServiceError> {
    let h = handle(&state, &id)?;
    let info = lock(&h.info).clone();
    let frame = h.frames.borrow().clone();
    Ok(Json(json!({"run": info, "frame": frame})))
}

fn sse_event(ev: &StreamEvent) -> Event {
    Event::default().event(ev.name()).data(ev.data().to_string())
}

struct StreamState {
    events: Option<broadcast::Receiver<StreamEvent>>,
    frames: Option<watch::Receiver<Option<Frame>>>,
    info: Arc<Mutex<RunInfo>>,
    done: bool,
}

enum Next {
    Event(Result<StreamEvent, broadcast::error::RecvError>),
    Frame(bool),
}

/// Frames go through a latest-value slot, so a slow subscriber skips frames
/// instead of buffering them. Reasoning, plan and guidance events are queued.
async fn stream_run(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ServiceError> {
    let h = handle(&state, &id)?;
    let events = lock(&h.events).as_ref().map(|tx| tx.subscribe());
    let mut frames = h.frames.clone();
    let first = frames.borrow_and_update().clone().map(StreamEvent::Frame);
    let init = StreamState { frames: events.is_some().then_some(frames), events, info: h.info.clone(), done: false };
    let head = futures::stream::iter(first.map(|f| Ok(sse_event(&f))));
    let tail = futures::stream::unfold(init, |mut st| async move {
        if st.done {
            return None;
        }
        loop {
            let Some(rx) = st.events.as_mut() else {
                // Run is over: send the final metrics once.
                st.done = true;
                let m = lock(&st.info).metrics.clone()?;
                return Some((Ok(sse_event(&StreamEvent::MetricsFinal(m))), st));
            };
            let next = match st.frames.as_mut() {
                Some(f) => tokio::select! {
                    biased;
                    e = rx.recv() => Next::Event(e),
                    c = f.changed() => Next::Frame(c.is_ok()),
                },
                None => Next::Event(rx.recv().await),
            };
            match next {
                Next::Event(Ok(ev)) => {
                    if matches!(ev, StreamEvent::MetricsFinal(_)) {
                        st.done = true;
                    }
                    return Some((Ok(sse_event(&ev)), st));
                }
                Next::Event(Err(broadcast::error::RecvError::Lagged(n))) => {
                    log::warn!("stream subscriber missed {n} events");
                }
                Next::Event(Err(broadcast::error::RecvError::Closed)) => st.events = None,
                Next::Frame(true) => {
                    let frame = st.frames.as_mut().and_then(|f| f.borrow_and_update().clone());
                    if let Some(frame) = frame {
                        return Some((Ok(sse_event(&StreamEvent::Frame(frame))), st));
                    }
                }
                Next::Frame(false) => st.frames = None,
            }
        }
    });
    use futures::StreamExt;
    Ok(Sse::new(head.chain(tail)).keep_alive(KeepAlive::default()))
}

#[derive(Debug, Deserialize)]
struct GuidanceBody {
    text: String,
}

async fn post_guidance(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<serde_json::Value>, ServiceError> {
    let h = handle(&state, &id)?;
    let body: GuidanceBody = serde_json::from_slice(&body).map_err(|e| ServiceError::Unprocessable(e.to_string()))?;
    if lock(&h.info).state == RunState::Finished {
        return Err(ServiceError::Gone(id));
    }
    let text = body.text.trim().to_string();
    if text.is_empty() {
        return Err(ServiceError::Unprocessable(GuidanceError::Empty.to_string()));
    }
    if text.chars().count() > MAX_GUIDANCE_CHARS {
        return Err(ServiceError::Unprocessable(GuidanceError::TooLong.to_string()));
    }
    let (tx, rx) = oneshot::channel();
    if lock(&h.control).send(Control::Guidance { text, reply: tx }).is_err() {
        return Err(ServiceError::Gone(id));
    }
    match tokio::time::timeout(Duration::from_secs(10), rx).await {
        Ok(Ok(Ok(sim_time))) => Ok(Json(json!({"accepted": true, "sim_time": sim_time}))),
        Ok(Ok(Err(GuidanceError::RunNotActive(_)))) | Ok(Err(_)) => Err(ServiceError::Gone(id)),
        Ok(Ok(Err(e))) => Err(ServiceError::Unprocessable(e.to_string())),
        Err(_) => Err(ServiceError::Internal("run did not respond".into())),
    }
}

fn send_control(state: &AppState, id: &str, msg: Control) -> Result<Arc<RunHandle>, ServiceError> {
    let h = handle(state, id)?;
    if lock(&h.info).state == RunState::Finished || lock(&h.control).send(msg).is_err() {
        return Err(ServiceError::Gone(id.to_string()));
    }
    Ok(h)
}

async fn pause_run(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<serde_json::Value>, ServiceError> {
    send_control(&state, &id, Control::Pause)?;
    Ok(Json(json!({"run_id": id, "state": "paused"})))
}

async fn resume_run(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<serde_json::Value>, ServiceError> {
    send_control(&state, &id, Control::Resume)?;
    Ok(Json(json!({"run_id": id, "state": "running"})))
}

#[derive(Debug, Deserialize)]
struct SpeedBody {
    factor: f64,
}

async fn speed_run(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<serde_json::Value>, ServiceError> {
    let body: SpeedBody = serde_json::from_slice(&body).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
    if !(body.factor >= 0.0 && body.factor.is_finite()) {
        return Err(ServiceError::BadRequest("factor must be a non-negative number".into()));
    }
    send_control(&state, &id, Control::Speed(body.factor))?;
    Ok(Json(json!({"run_id": id, "speed": body.factor})))
}

/// A service running on its own runtime thread; stops on drop.
pub struct ServiceHandle {
    pub addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl ServiceHandle {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Binds `addr` (port 0 picks a free port) and serves in the background.
pub fn spawn_service(config: ServiceConfig, addr: SocketAddr) -> Result<ServiceHandle, ServiceError> {
    let app = router(config)?;
    let listener = std::net::TcpListener::bind(addr).map_err(|e| ServiceError::Internal(e.to_string()))?;
    listener.set_nonblocking(true).map_err(|e| ServiceError::Internal(e.to_string()))?;
    let addr = listener.local_addr().map_err(|e| ServiceError::Internal(e.to_string()))?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()
        .map_err(|e| ServiceError::Internal(e.to_string()))?;
    let (tx, rx) = oneshot::channel::<()>();
    let thread = std::thread::spawn(move || {
        rt.block_on(async move {
            let listener = match tokio::net::TcpListener::from_std(listener) {
                Ok(l) => l,
                Err(e) => {
                    log::error!("service listener: {e}");
                    return;
                }
            };
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
        // open SSE streams would otherwise keep the runtime alive
        rt.shutdown_timeout(Duration::from_millis(100));
    });
    Ok(ServiceHandle { addr, shutdown: Some(tx), thread: Some(thread) })
}

/// Serves until the process is stopped.
pub fn serve(config: ServiceConfig, addr: SocketAddr) -> Result<(), ServiceError> {
    let app = router(config)?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| ServiceError::Internal(e.to_string()))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| ServiceError::Internal(e.to_string()))?;
        log::info!("listening on http://{}", listener.local_addr().map_err(|e| ServiceError::Internal(e.to_string()))?);
        axum::serve(listener, app).await.map_err(|e| ServiceError::Internal(e.to_string()))
    })
}
