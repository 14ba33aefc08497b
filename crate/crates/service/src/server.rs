//! HTTP front end of the queue.
//!
//! | method | path                   | success                  | errors                      |
//! |--------|------------------------|--------------------------|-----------------------------|
//! | POST   | `/batches`             | 201 `{batch_id, tasks}`  | 400 `invalid_batch`         |
//! | GET    | `/batches/{id}`        | 200 `BatchStatus`        | 404 `unknown_batch`         |
//! | GET    | `/tasks/next?rater=ID` | 200 `TaskView`, 204 none | 400 `missing_rater`         |
//! | POST   | `/tasks/{id}/ratings`  | 200 `RatingAck`          | 404 `unknown_task`, 422 `invalid_level`, 409 `duplicate_rating` |
//! | GET    | `/tasks/{id}`          | 200 `TaskRecord`         | 404 `unknown_task`          |
//! | GET    | `/health`              | 200                      |                             |
//!
//! Error bodies are `{"error": code, "message": text}`. `POST /batches`
//! accepts either a bare JSON array of paired queries (default policy) or
//! `{"tasks": [...], "policy": {"min_raters": n}}`.

use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use hitl_gan::nes::PairedQuery;
use hitl_gan::queue::{AggregationPolicy, Combine, Queue, QueueConfig, QueueError, TaskSpec};
use serde::{Deserialize, Serialize};
use tower_http::cors::CorsLayer;

/// Milliseconds since the Unix epoch, injectable for tests.
pub type Clock = Arc<dyn Fn() -> u64 + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub listen: SocketAddr,
    pub data_dir: PathBuf,
    pub lease_timeout: Duration,
    /// Raters per task when a batch does not specify a policy.
    pub min_raters: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            listen: SocketAddr::from(([127, 0, 0, 1], 8787)),
            data_dir: PathBuf::from("eval-data"),
            lease_timeout: Duration::from_secs(600),
            min_raters: 5,
        }
    }
}

impl ServiceConfig {
    pub fn queue_config(&self) -> QueueConfig {
        QueueConfig {
            lease_timeout_ms: self.lease_timeout.as_millis() as u64,
            default_policy: AggregationPolicy { min_raters: self.min_raters, combine: Combine::Mean },
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Queue(#[from] QueueError),
    #[error("listen on {addr}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

struct AppState {
    queue: Mutex<Queue>,
    clock: Clock,
}

#[derive(Debug, Serialize)]
struct ApiError {
    #[serde(skip)]
    status: StatusCode,
    error: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, error: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, error, message: message.into() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

impl From<QueueError> for ApiError {
    fn from(e: QueueError) -> Self {
        let (status, code) = match &e {
            QueueError::UnknownTask(_) => (StatusCode::NOT_FOUND, "unknown_task"),
            QueueError::UnknownBatch(_) => (StatusCode::NOT_FOUND, "unknown_batch"),
            QueueError::InvalidLevel(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_level"),
            QueueError::DuplicateRating { .. } => (StatusCode::CONFLICT, "duplicate_rating"),
            QueueError::Incomplete(_) => (StatusCode::CONFLICT, "incomplete"),
            QueueError::InvalidBatch(_) => (StatusCode::BAD_REQUEST, "invalid_batch"),
            QueueError::Storage(_) | QueueError::Corrupt { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "storage"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.body_text())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BatchRequest {
    Queries(Vec<PairedQuery>),
    Tasks {
        tasks: Vec<TaskSpec>,
        #[serde(default)]
        policy: Option<AggregationPolicy>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnqueueResponse {
    pub batch_id: String,
    pub tasks: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatingRequest {
    pub rater_id: String,
    pub level: i64,
}

#[derive(Debug, Deserialize)]
struct NextParams {
    rater: Option<String>,
}

type Shared = State<Arc<AppState>>;

async fn post_batch(
    State(state): Shared,
    body: Result<Json<BatchRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<EnqueueResponse>), ApiError> {
    let (tasks, policy) = match body?.0 {
        BatchRequest::Queries(q) => (q.into_iter().map(TaskSpec::from).collect::<Vec<_>>(), None),
        BatchRequest::Tasks { tasks, policy } => (tasks, policy),
    };
    let n = tasks.len();
    let batch_id = state.queue.lock().expect("queue lock").enqueue_batch(tasks, policy)?;
    Ok((StatusCode::CREATED, Json(EnqueueResponse { batch_id, tasks: n })))
}

async fn get_batch(State(state): Shared, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(Json(state.queue.lock().expect("queue lock").poll_batch(&id)?).into_response())
}

async fn next_task(State(state): Shared, Query(params): Query<NextParams>) -> Result<Response, ApiError> {
    let rater = params
        .rater
        .filter(|r| !r.is_empty())
        .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "missing_rater", "query parameter `rater` is required"))?;
    let now = (state.clock)();
    Ok(match state.queue.lock().expect("queue lock").next_task(&rater, now) {
        Some(view) => Json(view).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

async fn post_rating(
    State(state): Shared,
    Path(id): Path<String>,
    body: Result<Json<RatingRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let req = body?.0;
    if req.rater_id.is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "missing_rater", "rater_id must be non-empty"));
    }
    let now = (state.clock)();
    let mut queue = state.queue.lock().expect("queue lock");
    // Out-of-range integers share the invalid-level path, after the task lookup.
    let level = u8::try_from(req.level).unwrap_or(0);
    Ok(Json(queue.submit_rating(&id, &req.rater_id, level, now)?).into_response())
}

async fn get_task(State(state): Shared, Path(id): Path<String>) -> Result<Response, ApiError> {
    let now = (state.clock)();
    let queue = state.queue.lock().expect("queue lock");
    let task = queue.task(&id).ok_or_else(|| ApiError::from(QueueError::UnknownTask(id.clone())))?;
    Ok(Json(task.record(now)).into_response())
}

pub fn router(queue: Queue, clock: Clock) -> Router {
    let state = Arc::new(AppState { queue: Mutex::new(queue), clock });
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/batches", post(post_batch))
        .route("/batches/{id}", get(get_batch))
        .route("/tasks/next", get(next_task))
        .route("/tasks/{id}", get(get_task))
        .route("/tasks/{id}/ratings", post(post_rating))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Opens the queue in `config.data_dir` and serves until `shutdown` resolves.
pub async fn serve(
    config: ServiceConfig,
    clock: Clock,
    shutdown: impl Future<Output = ()> + Send + 'static,
    on_bound: impl FnOnce(SocketAddr),
) -> Result<(), ServeError> {
    let queue = Queue::open(&config.data_dir, config.queue_config())?;
    let listener = tokio::net::TcpListener::bind(config.listen)
        .await
        .map_err(|source| ServeError::Bind { addr: config.listen, source })?;
    let addr = listener.local_addr()?;
    tracing::info!(%addr, data_dir = %config.data_dir.display(), "evaluation service listening");
    on_bound(addr);
    axum::serve(listener, router(queue, clock)).with_graceful_shutdown(shutdown).await?;
    Ok(())
}

/// A service running on its own thread and runtime; stopped on drop.
pub struct RunningService {
    addr: SocketAddr,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<Result<(), ServeError>>>,
}

impl RunningService {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Stops the server and waits for it to release the data directory.
    pub fn stop(mut self) -> Result<(), ServeError> {
        self.shutdown()
    }

    fn shutdown(&mut self) -> Result<(), ServeError> {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        match self.thread.take() {
            Some(t) => t.join().expect("service thread panicked"),
            None => Ok(()),
        }
    }
}

impl Drop for RunningService {
    fn drop(&mut self) {
        let _ = self.shutdown();
    }
}

pub fn spawn(config: ServiceConfig, clock: Clock) -> Result<RunningService, ServeError> {
    let (stop_tx, stop_rx) = tokio::sync::oneshot::channel::<()>();
    let (addr_tx, addr_rx) = std::sync::mpsc::channel();
    let thread = std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
        rt.block_on(serve(
            config,
            clock,
            async {
                let _ = stop_rx.await;
            },
            move |addr| {
                let _ = addr_tx.send(addr);
            },
        ))
    });
    match addr_rx.recv() {
        Ok(addr) => Ok(RunningService { addr, stop: Some(stop_tx), thread: Some(thread) }),
        // The server failed before binding; surface its error.
        Err(_) => Err(thread.join().expect("service thread panicked").expect_err("server exited without binding")),
    }
}
