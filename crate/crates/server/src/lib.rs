//! HTTP front end for the evolution engine.
//!
//! | method | path                   | body                 | reply          |
//! |--------|------------------------|----------------------|----------------|
//! | GET    | `/health`              |                      | `Health`       |
//! | GET    | `/v1/presets`          |                      | `[PresetInfo]` |
//! | POST   | `/v1/runs`             | `CreateRunRequest`   | `RunStatus`    |
//! | POST   | `/v1/runs/resume`      | `ResumeRunRequest`   | `RunStatus`    |
//! | GET    | `/v1/runs`             |                      | `[RunStatus]`  |
//! | GET    | `/v1/runs/{id}`        |                      | `RunStatus`    |
//! | GET    | `/v1/runs/{id}/report` |                      | `RunReport`    |
//! | POST   | `/v1/reports`          | `WriteReportRequest` | `RunReport`    |
//!
//! Starting or resuming a run answers once the run is seeded (or restored);
//! generations then proceed on a blocking worker and are polled through
//! `/v1/runs/{id}`. Errors are `ApiError` bodies.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use shinka_core::api::{
    ApiError, CreateRunRequest, ErrorCode, Health, PresetInfo, ResumeRunRequest, RunState,
    RunStatus, WriteReportRequest,
};
use shinka_core::config::Preset;
use shinka_core::report::{replay_run_dir, write_report, ReportError, RunReport};
use shinka_core::runner::{Engine, Progress, ResumeOptions, RunError, RunOptions, RunOutcome};
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

#[derive(Debug)]
pub struct ServerError {
    status: StatusCode,
    body: ApiError,
}

impl ServerError {
    fn new(status: StatusCode, code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ApiError {
                code,
                message: message.into(),
            },
        }
    }

    fn not_found(what: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, ErrorCode::NotFound, what)
    }
}

impl From<RunError> for ServerError {
    fn from(e: RunError) -> Self {
        match &e {
            e if e.is_config_error() => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, ErrorCode::Config, e.to_string())
            }
            RunError::MissingCheckpoint(_) | RunError::Checkpoint(_) => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, ErrorCode::Config, e.to_string())
            }
            _ => Self::new(StatusCode::INTERNAL_SERVER_ERROR, ErrorCode::Runtime, e.to_string()),
        }
    }
}

impl From<ReportError> for ServerError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::MissingRunDir(_) => Self::not_found(e.to_string()),
            _ => Self::new(StatusCode::INTERNAL_SERVER_ERROR, ErrorCode::Runtime, e.to_string()),
        }
    }
}

impl IntoResponse for ServerError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

fn worker_panicked(e: tokio::task::JoinError) -> ServerError {
    ServerError::new(
        StatusCode::INTERNAL_SERVER_ERROR,
        ErrorCode::Runtime,
        format!("worker failed: {e}"),
    )
}

struct RunEntry {
    status: RunStatus,
    report: Option<RunReport>,
}

type Entry = Arc<Mutex<RunEntry>>;

#[derive(Default)]
pub struct AppState {
    runs: Mutex<BTreeMap<String, Entry>>,
    next_id: AtomicU64,
}

impl AppState {
    fn allocate_id(&self) -> String {
        format!("run-{}", self.next_id.fetch_add(1, Ordering::SeqCst) + 1)
    }

    fn entry(&self, id: &str) -> Result<Entry, ServerError> {
        self.runs
            .lock()
            .expect("run table lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ServerError::not_found(format!("no run '{id}'")))
    }
}

pub type SharedState = Arc<AppState>;

pub fn router(state: SharedState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/v1/presets", get(presets))
        .route("/v1/runs", post(create_run).get(list_runs))
        .route("/v1/runs/resume", post(resume_run))
        .route("/v1/runs/{id}", get(get_run))
        .route("/v1/runs/{id}/report", get(get_report))
        .route("/v1/reports", post(build_report))
        .with_state(state)
}

/// Serves on an already bound listener until the task is dropped.
pub async fn serve(listener: TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(SharedState::default())).await
}

/// Binds `addr` and serves in the background; returns the bound address.
pub async fn spawn(addr: SocketAddr) -> std::io::Result<(SocketAddr, JoinHandle<std::io::Result<()>>)> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    Ok((local, tokio::spawn(serve(listener))))
}

async fn health() -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        version: env!("CARGO_PKG_VERSION").into(),
    })
}

async fn presets() -> Json<Vec<PresetInfo>> {
    Json(Preset::ALL.iter().copied().map(PresetInfo::from).collect())
}

async fn list_runs(State(state): State<SharedState>) -> Json<Vec<RunStatus>> {
    let entries: Vec<Entry> = state.runs.lock().expect("run table lock").values().cloned().collect();
    Json(
        entries
            .iter()
            .map(|e| e.lock().expect("run lock").status.clone())
            .collect(),
    )
}

async fn get_run(
    State(state): State<SharedState>,
    Path(id): Path<String>,
) -> Result<Json<RunStatus>, ServerError> {
    let entry = state.entry(&id)?;
    let status = entry.lock().expect("run lock").status.clone();
    Ok(Json(status))
}

async fn get_report(
    State(state): State<SharedState>,
    Path(id): Path<String>,
) -> Result<Json<RunReport>, ServerError> {
    let entry = state.entry(&id)?;
    let guard = entry.lock().expect("run lock");
    match &guard.report {
        Some(report) => Ok(Json(report.clone())),
        None => Err(ServerError::new(
            StatusCode::CONFLICT,
            ErrorCode::NotFound,
            format!("run '{id}' has no report yet (state {:?})", guard.status.state),
        )),
    }
}

async fn build_report(Json(req): Json<WriteReportRequest>) -> Result<Json<RunReport>, ServerError> {
    let report = tokio::task::spawn_blocking(move || -> Result<RunReport, ReportError> {
        let report = replay_run_dir(&req.run_dir)?;
        write_report(&report, &req.out_dir)?;
        Ok(report)
    })
    .await
    .map_err(worker_panicked)??;
    Ok(Json(report))
}

fn progress_sink(entry: &Entry) -> Arc<dyn Fn(&Progress) + Send + Sync> {
    let entry = entry.clone();
    Arc::new(move |p: &Progress| {
        let mut guard = entry.lock().expect("run lock");
        guard.status.generation = p.generation;
        guard.status.num_generations = p.num_generations;
        guard.status.best_fitness = p.best_fitness;
        guard.status.archive_size = p.archive_size;
    })
}

fn new_entry(id: String, run_dir: std::path::PathBuf) -> Entry {
    Arc::new(Mutex::new(RunEntry {
        status: RunStatus {
            id,
            run_dir,
            state: RunState::Running,
            preset: None,
            generation: 0,
            num_generations: 0,
            best_fitness: None,
            archive_size: 0,
            error: None,
        },
        report: None,
    }))
}

/// Registers a started engine and drives it to completion in the background.
fn launch(state: &SharedState, id: String, entry: Entry, engine: Engine) -> RunStatus {
    {
        let mut guard = entry.lock().expect("run lock");
        guard.status.preset = engine.preset().map(str::to_string);
        guard.status.generation = engine.generation();
        guard.status.num_generations = engine.config().evolution.num_generations;
        guard.status.best_fitness = engine.archive().best().map(|b| b.fitness);
        guard.status.archive_size = engine.archive().len();
    }
    state
        .runs
        .lock()
        .expect("run table lock")
        .insert(id.clone(), entry.clone());
    tracing::info!(run = %id, "run started");
    let worker = entry.clone();
    tokio::spawn(async move {
        let result = tokio::task::spawn_blocking(move || engine.run()).await;
        let mut guard = worker.lock().expect("run lock");
        match result {
            Ok(Ok(RunOutcome {
                completed, report, generation, ..
            })) => {
                guard.status.state = if completed { RunState::Completed } else { RunState::Stopped };
                guard.status.generation = generation;
                guard.status.best_fitness = report.best_program.as_ref().map(|b| b.fitness);
                guard.report = Some(report);
                tracing::info!(run = %id, generation, completed, "run finished");
            }
            Ok(Err(e)) => {
                tracing::error!(run = %id, error = %e, "run failed");
                guard.status.state = RunState::Failed;
                guard.status.error = Some(ServerError::from(e).body);
            }
            Err(e) => {
                tracing::error!(run = %id, error = %e, "run worker panicked");
                guard.status.state = RunState::Failed;
                guard.status.error = Some(worker_panicked(e).body);
            }
        }
    });
    let status = entry.lock().expect("run lock").status.clone();
    status
}

async fn create_run(
    State(state): State<SharedState>,
    Json(req): Json<CreateRunRequest>,
) -> Result<(StatusCode, Json<RunStatus>), ServerError> {
    let id = state.allocate_id();
    let entry = new_entry(id.clone(), req.run_dir.clone());
    let options = RunOptions {
        run_dir: req.run_dir,
        initial_program: req.initial_program,
        replay: req.replay,
        preset: req.preset,
        runner: None,
        stop_after: req.stop_after,
        progress: Some(progress_sink(&entry)),
    };
    let config = req.config;
    let engine = tokio::task::spawn_blocking(move || Engine::start(config, options))
        .await
        .map_err(worker_panicked)??;
    Ok((StatusCode::CREATED, Json(launch(&state, id, entry, engine))))
}

async fn resume_run(
    State(state): State<SharedState>,
    Json(req): Json<ResumeRunRequest>,
) -> Result<(StatusCode, Json<RunStatus>), ServerError> {
    let id = state.allocate_id();
    let entry = new_entry(id.clone(), req.run_dir.clone());
    let options = ResumeOptions {
        runner: None,
        stop_after: req.stop_after,
        progress: Some(progress_sink(&entry)),
    };
    let run_dir = req.run_dir;
    let engine = tokio::task::spawn_blocking(move || Engine::resume(&run_dir, options))
        .await
        .map_err(worker_panicked)??;
    Ok((StatusCode::CREATED, Json(launch(&state, id, entry, engine))))
}
