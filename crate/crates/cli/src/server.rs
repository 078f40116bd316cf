//! HTTP service. Every JSON response carries the `round` it describes;
//! plain-text responses carry it in the `x-crowdlabel-round` header.
//!
//! | method | path | body / query |
//! |---|---|---|
//! | GET | `/health` | |
//! | GET | `/tasks` | |
//! | POST | `/tasks` | `{"task": Task, "dataset": [row]}` or `{"scenario": Scenario}` |
//! | GET | `/tasks/{id}` | |
//! | POST | `/tasks/{id}/advance` | `{"rounds": n}` or `{"to_termination": true}` |
//! | GET | `/tasks/{id}/messages` | `?since=<seq>` |
//! | GET | `/tasks/{id}/metrics` | |
//! | GET | `/tasks/{id}/human-batches` | |
//! | GET | `/tasks/{id}/human-batches/{batch}` | batch file (CSV) |
//! | POST | `/tasks/{id}/human-batches/import` | completed batch file |
//! | POST | `/tasks/{id}/verification` | `{"count": n}` or `{"fraction": f}` |
//! | GET | `/tasks/{id}/export` | JSON lines |

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderName, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::Mutex;

use crowdlabel::annotators::human::BatchStatus;
use crowdlabel::annotators::{export_human_batch, Connectors};
use crowdlabel::config::DatasetRow;
use crowdlabel::error::Error;
use crowdlabel::export::export_dataset;
use crowdlabel::orchestration::VerificationSize;
use crowdlabel::scenario::Scenario;
use crowdlabel::{validate_task, Engine, RunState, Task, TerminationReason};

use crate::view::{metrics, outcome_json, summarize};
use crate::workspace::{create_task, open_engine, task_ids};

pub const ROUND_HEADER: HeaderName = HeaderName::from_static("x-crowdlabel-round");

struct TaskSlot {
    engine: Arc<Mutex<Engine>>,
    /// Last committed state, readable while an advance holds the engine.
    view: RwLock<Arc<RunState>>,
}

impl TaskSlot {
    fn new(engine: Engine) -> Self {
        let view = RwLock::new(Arc::new(engine.state().clone()));
        TaskSlot { engine: Arc::new(Mutex::new(engine)), view }
    }

    fn read(&self) -> Arc<RunState> {
        self.view.read().expect("view lock poisoned").clone()
    }

    fn publish(&self, state: &RunState) {
        *self.view.write().expect("view lock poisoned") = Arc::new(state.clone());
    }
}

pub struct AppState {
    root: PathBuf,
    connectors: Connectors,
    tasks: RwLock<BTreeMap<String, Arc<TaskSlot>>>,
}

impl AppState {
    /// Opens every task already present under `root`.
    pub fn load(root: impl Into<PathBuf>, connectors: Connectors) -> crowdlabel::Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        let mut tasks = BTreeMap::new();
        for id in task_ids(&root)? {
            let engine = open_engine(&root, &id, &connectors)?;
            tasks.insert(id, Arc::new(TaskSlot::new(engine)));
        }
        Ok(AppState { root, connectors, tasks: RwLock::new(tasks) })
    }

    fn slot(&self, id: &str) -> Result<Arc<TaskSlot>, ApiError> {
        self.tasks
            .read()
            .expect("task table poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown task {id:?}")))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    round: Option<u32>,
    termination: Option<TerminationReason>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, message: message.into(), round: None, termination: None }
    }

    fn at(mut self, state: &RunState) -> Self {
        self.round = Some(state.round);
        self
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::BudgetExceeded { .. } | Error::NoAffordableAnnotator { .. } | Error::AwaitingHuman(_) | Error::Terminated(_) => {
                StatusCode::CONFLICT
            }
            Error::Transport(_) => StatusCode::BAD_GATEWAY,
            Error::Checksum | Error::SchemaVersion { .. } | Error::Io(_) | Error::Internal(_) | Error::Diverged { .. } => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({"error": self.message, "round": self.round});
        if let Some(t) = self.termination {
            body["termination"] = json!(t);
        }
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(|| async { Json(json!({"status": "ok"})) }))
        .route("/tasks", get(list_tasks).post(create))
        .route("/tasks/{id}", get(summary))
        .route("/tasks/{id}/advance", post(advance))
        .route("/tasks/{id}/messages", get(messages))
        .route("/tasks/{id}/metrics", get(dashboard))
        .route("/tasks/{id}/human-batches", get(list_batches))
        .route("/tasks/{id}/human-batches/import", post(import_batch))
        .route("/tasks/{id}/human-batches/{batch}", get(export_batch))
        .route("/tasks/{id}/verification", post(verification))
        .route("/tasks/{id}/export", get(export))
        .with_state(state)
}

pub async fn serve(state: Arc<AppState>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

async fn list_tasks(State(app): State<Arc<AppState>>) -> Json<Value> {
    let tasks: Vec<Value> = app
        .tasks
        .read()
        .expect("task table poisoned")
        .values()
        .map(|slot| json!(summarize(&slot.read())))
        .collect();
    Json(json!({"tasks": tasks}))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateTask {
    #[serde(default)]
    task: Option<Task>,
    #[serde(default)]
    dataset: Vec<DatasetRow>,
    #[serde(default)]
    scenario: Option<Scenario>,
}

async fn create(State(app): State<Arc<AppState>>, Json(body): Json<CreateTask>) -> ApiResult<(StatusCode, Json<Value>)> {
    let state = match (body.task, body.scenario) {
        (Some(task), None) => {
            let samples = body
                .dataset
                .into_iter()
                .map(|r| r.into_sample(&task.class_names))
                .collect::<crowdlabel::Result<Vec<_>>>()?;
            validate_task(task, samples)?
        }
        (None, Some(sc)) if body.dataset.is_empty() => sc.build()?,
        _ => return Err(ApiError::new(StatusCode::BAD_REQUEST, "give either `task` with `dataset`, or `scenario`")),
    };
    let id = state.task.task_id.clone();
    let mut tasks = app.tasks.write().expect("task table poisoned");
    if tasks.contains_key(&id) {
        return Err(ApiError::new(StatusCode::CONFLICT, format!("task {id:?} already exists")));
    }
    let engine = Engine::new(state, &app.connectors)?;
    let store = create_task(&app.root, engine.state(), false)?;
    let engine = engine.with_store(store);
    let body = json!(summarize(engine.state()));
    tasks.insert(id, Arc::new(TaskSlot::new(engine)));
    Ok((StatusCode::CREATED, Json(body)))
}

async fn summary(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    Ok(Json(json!(summarize(&app.slot(&id)?.read()))))
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct Advance {
    #[serde(default)]
    rounds: Option<u32>,
    #[serde(default)]
    to_termination: bool,
}

async fn advance(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Option<Json<Advance>>,
) -> ApiResult<Json<Value>> {
    let body = body.map(|Json(b)| b).unwrap_or_default();
    let limit = match (body.rounds, body.to_termination) {
        (Some(_), true) => return Err(ApiError::new(StatusCode::BAD_REQUEST, "`rounds` and `to_termination` are exclusive")),
        (Some(0), false) => return Err(ApiError::new(StatusCode::BAD_REQUEST, "`rounds` must be positive")),
        (Some(n), false) => Some(n),
        (None, true) => None,
        (None, false) => Some(1),
    };
    let slot = app.slot(&id)?;
    let Ok(mut engine) = slot.engine.clone().try_lock_owned() else {
        return Err(ApiError::new(StatusCode::CONFLICT, format!("an advance of task {id:?} is already running")).at(&slot.read()));
    };
    if let Some(reason) = engine.state().termination {
        let mut e = ApiError::new(StatusCode::CONFLICT, format!("task {id:?} has terminated: {reason}")).at(engine.state());
        e.termination = Some(reason);
        return Err(e);
    }
    let worker = slot.clone();
    tokio::task::spawn_blocking(move || {
        let result = engine.run(limit);
        worker.publish(engine.state());
        let state = engine.state();
        match result {
            Ok(outcomes) => Ok(Json(json!({
                "task_id": state.task.task_id,
                "round": state.round,
                "outcomes": outcomes.iter().map(outcome_json).collect::<Vec<_>>(),
                "summary": summarize(state),
            }))),
            Err(e) => Err(ApiError::from(e).at(state)),
        }
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

#[derive(Deserialize)]
struct Since {
    #[serde(default)]
    since: u64,
}

async fn messages(State(app): State<Arc<AppState>>, Path(id): Path<String>, Query(q): Query<Since>) -> ApiResult<Json<Value>> {
    let state = app.slot(&id)?.read();
    Ok(Json(json!({
        "task_id": id,
        "round": state.round,
        "messages": state.messages.since(q.since),
        "next_since": state.messages.len(),
    })))
}

async fn dashboard(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    Ok(Json(json!(metrics(&app.slot(&id)?.read()))))
}

async fn list_batches(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let state = app.slot(&id)?.read();
    let batches: Vec<Value> = state
        .human_batches
        .iter()
        .map(|b| {
            json!({
                "batch_id": b.batch_id,
                "round": b.round,
                "annotator_id": b.annotator_id,
                "status": b.status,
                "size": b.items.len(),
                "labeled": b.labels.len(),
                "verification": b.verification,
                "open": b.status != BatchStatus::Completed,
            })
        })
        .collect();
    Ok(Json(json!({"task_id": id, "round": state.round, "batches": batches})))
}

fn text(round: u32, content_type: &'static str, body: String) -> Response {
    ([(header::CONTENT_TYPE, content_type), (ROUND_HEADER, &round.to_string())], body).into_response()
}

async fn export_batch(State(app): State<Arc<AppState>>, Path((id, batch)): Path<(String, String)>) -> ApiResult<Response> {
    let state = app.slot(&id)?.read();
    let found = state
        .human_batches
        .iter()
        .find(|b| b.batch_id == batch)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown batch {batch:?}")).at(&state))?;
    let file = export_human_batch(found, &state.task.class_names).map_err(|e| ApiError::from(e).at(&state))?;
    Ok(text(state.round, "text/csv; charset=utf-8", file))
}

async fn import_batch(State(app): State<Arc<AppState>>, Path(id): Path<String>, body: String) -> ApiResult<Json<Value>> {
    let slot = app.slot(&id)?;
    let mut engine = slot.engine.clone().lock_owned().await;
    let worker = slot.clone();
    tokio::task::spawn_blocking(move || {
        let result = engine.import_human_batch(&body);
        worker.publish(engine.state());
        let state = engine.state();
        match result {
            Ok(outcome) => Ok(Json(json!({
                "task_id": state.task.task_id,
                "round": state.round,
                "outcome": outcome_json(&outcome),
                "summary": summarize(state),
            }))),
            Err(e) => Err(ApiError::from(e).at(state)),
        }
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Verification {
    #[serde(default)]
    count: Option<usize>,
    #[serde(default)]
    fraction: Option<f64>,
}

async fn verification(State(app): State<Arc<AppState>>, Path(id): Path<String>, Json(body): Json<Verification>) -> ApiResult<Json<Value>> {
    let size = match (body.count, body.fraction) {
        (Some(c), None) => VerificationSize::Count(c),
        (None, Some(f)) if (0.0..=1.0).contains(&f) => VerificationSize::Fraction(f),
        _ => return Err(ApiError::new(StatusCode::BAD_REQUEST, "give `count`, or `fraction` in [0, 1]")),
    };
    let slot = app.slot(&id)?;
    let mut engine = slot.engine.lock().await;
    let batch = engine.flag_final_verification(size).map_err(|e| {
        let status = if matches!(e, Error::InvalidTask(_)) { StatusCode::CONFLICT } else { StatusCode::BAD_REQUEST };
        ApiError::new(status, e.to_string()).at(engine.state())
    })?;
    slot.publish(engine.state());
    let samples: Vec<&str> = batch.items.iter().map(|i| i.sample_id.as_str()).collect();
    Ok(Json(json!({"task_id": id, "round": engine.state().round, "batch_id": batch.batch_id, "samples": samples})))
}

async fn export(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let state = app.slot(&id)?.read();
    let body = export_dataset(&state)?;
    Ok(text(state.round, "application/x-ndjson", body))
}
