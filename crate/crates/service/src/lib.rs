//! HTTP JSON API over the evaluation harness: launch and monitor runs, stream
//! episode events, page through samples, inspect and replay the discrepancy buffer.

use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::AtomicBool;
use std::sync::{mpsc, Arc, Mutex};

use discharge_core::guidelines::RetrievalIndex;
use discharge_core::harness::BackendSpec;
use tracing::info;

pub mod error;
pub mod events;
pub mod routes;
pub mod runs;

pub use error::ApiError;
pub use events::{AuditDigest, EventKind, EventLog, RunEvent};
pub use routes::router;
pub use runs::{Progress, Registry, RunHandle, RunState};

pub const DEFAULT_ORIGIN: &str = "http://localhost:5173";

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Parent of every run directory.
    pub out_dir: PathBuf,
    /// Default cohort: NDJSON directory, Bundle file or FHIR base URL.
    pub cohort: String,
    pub index: RetrievalIndex,
    pub backend: BackendSpec,
    /// Backend for buffer replay runs; falls back to `backend`.
    pub replay_backend: Option<BackendSpec>,
    pub buffer_path: PathBuf,
    pub default_seed: u64,
    pub patient_limit: usize,
    pub allowed_origins: Vec<String>,
    pub bearer_token: Option<String>,
    /// Static dashboard build served under /ui.
    pub ui_dir: Option<PathBuf>,
}

impl ServiceConfig {
    pub fn new(out_dir: impl Into<PathBuf>, cohort: impl Into<String>, index: RetrievalIndex, backend: BackendSpec) -> Self {
        Self {
            out_dir: out_dir.into(),
            cohort: cohort.into(),
            index,
            backend,
            replay_backend: None,
            buffer_path: PathBuf::from("data/discrepancy_buffer.jsonl"),
            default_seed: 0,
            patient_limit: 50,
            allowed_origins: vec![DEFAULT_ORIGIN.to_string()],
            bearer_token: None,
            ui_dir: None,
        }
    }
}

/// Shared state behind every handler.
pub struct AppState {
    pub cfg: ServiceConfig,
    pub registry: Registry,
    /// Set while a replay run is queued or executing.
    pub replay_active: Arc<AtomicBool>,
    worker: Mutex<mpsc::Sender<runs::Job>>,
}

impl AppState {
    /// Starts the run worker and re-registers finished runs already on disk.
    pub fn new(cfg: ServiceConfig) -> Arc<Self> {
        let replay_active = Arc::new(AtomicBool::new(false));
        let worker = runs::spawn_worker(replay_active.clone());
        let registry = Registry::default();
        registry.rebuild(&cfg.out_dir);
        Arc::new(Self { cfg, registry, replay_active, worker: Mutex::new(worker) })
    }

    pub(crate) fn submit(&self, job: runs::Job) -> Result<(), ApiError> {
        self.worker
            .lock()
            .expect("worker lock")
            .send(job)
            .map_err(|_| ApiError::internal("run worker has stopped"))
    }
}

/// Serves the API on `addr` until `shutdown` resolves.
pub async fn serve(cfg: ServiceConfig, addr: SocketAddr, shutdown: impl Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    serve_listener(cfg, listener, shutdown).await
}

pub async fn serve_listener(
    cfg: ServiceConfig,
    listener: tokio::net::TcpListener,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let state = AppState::new(cfg);
    info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}
