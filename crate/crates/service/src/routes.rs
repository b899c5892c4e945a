use std::convert::Infallible;
use std::path::Path;
use std::sync::atomic::Ordering;
use std::sync::Arc;

use axum::extract::{Path as UrlPath, Query, Request, State};
use axum::http::{header, HeaderMap, HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use discharge_core::buffer::DiscrepancyStore;
use discharge_core::harness::{list_samples, BackendSpec, Cohort, ConfigName, Harness, RunConfig};
use discharge_core::planner::backend_configured;
use futures_util::stream::{self, Stream, StreamExt};
use serde::Deserialize;
use serde_json::{json, Value};
use tower_http::cors::{AllowOrigin, CorsLayer};
use tower_http::services::ServeDir;
use tracing::warn;

use crate::error::ApiError;
use crate::runs::{Job, RunEntry, RunHandle};
use crate::AppState;

type Shared = State<Arc<AppState>>;

pub const DEFAULT_PAGE: usize = 50;
pub const MAX_PAGE: usize = 500;

pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/runs", get(list_runs).post(create_runs))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/samples", get(get_samples))
        .route("/runs/{id}/events", get(get_events))
        .route("/buffer", get(get_buffer))
        .route("/replay", post(create_replay))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token))
        .route("/health", get(health));

    let origins: Vec<HeaderValue> =
        state.cfg.allowed_origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()).collect();
    let cors = CorsLayer::new()
        .allow_origin(AllowOrigin::list(origins))
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::AUTHORIZATION, header::CONTENT_TYPE, header::HeaderName::from_static("last-event-id")]);

    let mut app = Router::new().nest("/api", api);
    if let Some(dir) = &state.cfg.ui_dir {
        app = app.nest_service("/ui", ServeDir::new(dir).append_index_html_on_directories(true));
    }
    app.layer(cors).with_state(state)
}

async fn require_token(State(state): Shared, req: Request, next: Next) -> Response {
    let Some(expected) = state.cfg.bearer_token.as_deref() else {
        return next.run(req).await;
    };
    let from_header = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    // EventSource cannot set headers, so the token may also come as a query parameter.
    let from_query = req
        .uri()
        .query()
        .and_then(|q| q.split('&').find_map(|kv| kv.strip_prefix("access_token=")));
    if from_header == Some(expected) || from_query == Some(expected) {
        next.run(req).await
    } else {
        ApiError::unauthorized().into_response()
    }
}

async fn health() -> Json<Value> {
    Json(json!({
        "status": "ok",
        "version": env!("CARGO_PKG_VERSION"),
        "backend_configured": backend_configured(),
    }))
}

async fn list_runs(State(state): Shared) -> Json<Vec<RunHandle>> {
    Json(state.registry.list())
}

fn lookup(state: &AppState, id: &str) -> Result<Arc<RunEntry>, ApiError> {
    state.registry.get(id).ok_or_else(|| ApiError::not_found(format!("unknown run {id}")))
}

async fn get_run(State(state): Shared, UrlPath(id): UrlPath<String>) -> Result<Json<RunHandle>, ApiError> {
    Ok(Json(lookup(&state, &id)?.snapshot()))
}

#[derive(Debug, Deserialize)]
pub struct CreateRuns {
    pub configs: Vec<Value>,
    #[serde(default)]
    pub cohort: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub limit: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
pub struct CreateReplay {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub cohort: Option<String>,
}

/// Expands the request's config list. `"all"` means the four ablation configs
/// plus buffer_replay when the buffer has pending entries right now.
fn expand_configs(items: &[Value], pending: usize) -> Result<Vec<RunConfig>, ApiError> {
    if items.is_empty() {
        return Err(ApiError::invalid_config("configs must not be empty"));
    }
    let mut out = Vec::new();
    for item in items {
        match item {
            Value::String(s) if s == "all" => {
                out.extend(ConfigName::ABLATION.iter().map(|&n| RunConfig::new(n)));
                if pending > 0 {
                    out.push(RunConfig::new(ConfigName::BufferReplay));
                }
            }
            Value::String(s) => {
                let name: ConfigName = s.parse().map_err(|e| ApiError::invalid_config(format!("{e}")))?;
                out.push(RunConfig::new(name));
            }
            Value::Object(_) => {
                let cfg: RunConfig = serde_json::from_value(item.clone())
                    .map_err(|e| ApiError::invalid_config(format!("inline config: {e}")))?;
                out.push(cfg);
            }
            other => return Err(ApiError::invalid_config(format!("unsupported config entry {other}"))),
        }
    }
    Ok(out)
}

async fn create_runs(State(state): Shared, body: Result<Json<CreateRuns>, axum::extract::rejection::JsonRejection>) -> Result<(StatusCode, Json<Value>), ApiError> {
    let Json(body) = body.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let store = DiscrepancyStore::new(&state.cfg.buffer_path);
    let pending = store.pending().map_err(|e| ApiError::internal(e.to_string()))?.len();
    let mut configs = expand_configs(&body.configs, pending)?;

    let seed = body
        .seed
        .or_else(|| body.configs.iter().find_map(|v| v.get("seed").and_then(Value::as_u64)))
        .unwrap_or(state.cfg.default_seed);
    for cfg in &mut configs {
        cfg.seed = seed;
        if let Some(limit) = body.limit {
            cfg.patient_limit = limit;
        }
        cfg.validate().map_err(|e| ApiError::invalid_config(e.to_string()))?;
    }
    let handles = launch(&state, configs, body.cohort, seed, pending).await?;
    let run_ids: Vec<&str> = handles.iter().map(|h| h.run_id.as_str()).collect();
    Ok((StatusCode::ACCEPTED, Json(json!({"run_ids": run_ids, "runs": handles}))))
}

async fn create_replay(State(state): Shared, body: Option<Json<CreateReplay>>) -> Result<(StatusCode, Json<RunHandle>), ApiError> {
    let body = body.map(|Json(b)| b).unwrap_or_default();
    let store = DiscrepancyStore::new(&state.cfg.buffer_path);
    let pending = store.pending().map_err(|e| ApiError::internal(e.to_string()))?.len();
    let mut cfg = RunConfig::new(ConfigName::BufferReplay);
    cfg.seed = body.seed.unwrap_or(state.cfg.default_seed);
    let seed = cfg.seed;
    let mut handles = launch(&state, vec![cfg], body.cohort, seed, pending).await?;
    Ok((StatusCode::ACCEPTED, Json(handles.remove(0))))
}

/// Builds a fresh harness session for one submission and queues it.
async fn launch(state: &Arc<AppState>, configs: Vec<RunConfig>, cohort: Option<String>, seed: u64, pending: usize) -> Result<Vec<RunHandle>, ApiError> {
    let wants_replay = configs.iter().any(|c| c.name == ConfigName::BufferReplay);
    if wants_replay {
        if pending == 0 {
            return Err(ApiError::conflict("discrepancy buffer has no pending entries"));
        }
        if state.replay_active.swap(true, Ordering::SeqCst) {
            return Err(ApiError::conflict("a replay run is already in progress"));
        }
    }
    let result = build_job(state, &configs, cohort, seed, pending).await;
    match result {
        Ok((job, handles)) => {
            state.submit(job)?;
            Ok(handles)
        }
        Err(e) => {
            if wants_replay {
                state.replay_active.store(false, Ordering::SeqCst);
            }
            Err(e)
        }
    }
}

async fn build_job(state: &Arc<AppState>, configs: &[RunConfig], cohort: Option<String>, seed: u64, pending: usize) -> Result<(Job, Vec<RunHandle>), ApiError> {
    let state = state.clone();
    let configs = configs.to_vec();
    // Backend construction and teardown may block, so the whole session is
    // assembled off the async executor.
    tokio::task::spawn_blocking(move || assemble_job(&state, &configs, cohort, seed, pending))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
}

fn assemble_job(state: &AppState, configs: &[RunConfig], cohort: Option<String>, seed: u64, pending: usize) -> Result<(Job, Vec<RunHandle>), ApiError> {
    let spec = cohort.unwrap_or_else(|| state.cfg.cohort.clone());
    let limit = configs.iter().map(|c| c.patient_limit).max().unwrap_or(state.cfg.patient_limit);
    let cohort = Cohort::resolve(&spec, limit, &Default::default()).map_err(|e| ApiError::bad_request(format!("cohort: {e}")))?;

    let session = |backend: &BackendSpec| {
        Harness::from_spec(
            cohort.clone(),
            state.cfg.index.clone(),
            backend,
            seed,
            DiscrepancyStore::new(&state.cfg.buffer_path),
        )
        .map_err(|e| ApiError::bad_request(format!("backend: {e}")))
    };
    let main = session(&state.cfg.backend)?;
    let replay = session(state.cfg.replay_backend.as_ref().unwrap_or(&state.cfg.backend))?;

    let mut runs = Vec::new();
    let mut handles = Vec::new();
    for cfg in configs {
        let run_id = state.registry.next_run_id(cfg.name);
        let (harness, total) = if cfg.name == ConfigName::BufferReplay {
            (replay.clone(), pending.min(cfg.patient_limit))
        } else {
            (main.clone(), cohort.len().min(cfg.patient_limit))
        };
        let entry = Arc::new(RunEntry::new(run_id.clone(), state.cfg.out_dir.join(&run_id), cfg.clone(), total));
        state.registry.insert(entry.clone());
        handles.push(entry.snapshot());
        runs.push((harness, cfg.clone(), entry));
    }
    Ok((Job { runs }, handles))
}

#[derive(Debug, Deserialize)]
pub struct PageQuery {
    #[serde(default)]
    pub offset: usize,
    #[serde(default)]
    pub limit: Option<usize>,
}

async fn get_samples(State(state): Shared, UrlPath(id): UrlPath<String>, Query(q): Query<PageQuery>) -> Result<Json<Value>, ApiError> {
    let entry = lookup(&state, &id)?;
    let limit = q.limit.unwrap_or(DEFAULT_PAGE).clamp(1, MAX_PAGE);
    let dir = entry.run_dir.clone();
    let offset = q.offset;
    let (total, items) = tokio::task::spawn_blocking(move || read_page(&dir, offset, limit))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    let end = offset.saturating_add(items.len());
    let next_offset = (end < total).then_some(end);
    Ok(Json(json!({
        "run_id": id,
        "offset": offset,
        "limit": limit,
        "total": total,
        "next_offset": next_offset,
        "items": items,
    })))
}

fn read_page(run_dir: &Path, offset: usize, limit: usize) -> Result<(usize, Vec<Value>), ApiError> {
    // A queued run has no samples directory yet.
    let files = if run_dir.exists() {
        list_samples(run_dir).map_err(|e| ApiError::internal(e.to_string()))?
    } else {
        Vec::new()
    };
    let mut items = Vec::new();
    for path in files.iter().skip(offset).take(limit) {
        let text = std::fs::read_to_string(path).map_err(|e| ApiError::internal(format!("{}: {e}", path.display())))?;
        items.push(serde_json::from_str(&text).map_err(|e| ApiError::internal(format!("{}: {e}", path.display())))?);
    }
    Ok((files.len(), items))
}

#[derive(Debug, Deserialize)]
pub struct EventsQuery {
    #[serde(default)]
    pub last_event_id: Option<u64>,
}

async fn get_events(State(state): Shared, UrlPath(id): UrlPath<String>, Query(q): Query<EventsQuery>, headers: HeaderMap) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let entry = lookup(&state, &id)?;
    let after = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<u64>().ok())
        .or(q.last_event_id)
        .unwrap_or(0);
    Ok(Sse::new(event_stream(entry, after)).keep_alive(KeepAlive::default()))
}

/// Replays history after `after`, then follows the log until run_completed.
fn event_stream(entry: Arc<RunEntry>, after: u64) -> impl Stream<Item = Result<Event, Infallible>> {
    let rx = entry.events.subscribe();
    stream::unfold((entry, after, rx, false), |(entry, mut after, mut rx, done)| async move {
        if done {
            return None;
        }
        loop {
            rx.borrow_and_update();
            let (batch, closed) = entry.events.since(after);
            if !batch.is_empty() {
                let frames: Vec<Result<Event, Infallible>> = batch
                    .iter()
                    .map(|ev| {
                        let data = serde_json::to_string(ev).unwrap_or_else(|e| {
                            warn!("event encoding failed: {e}");
                            "{}".into()
                        });
                        Ok(Event::default().id(ev.seq.to_string()).data(data))
                    })
                    .collect();
                after = batch.last().map(|e| e.seq).unwrap_or(after);
                return Some((stream::iter(frames), (entry, after, rx, closed)));
            }
            if closed {
                return None;
            }
            if rx.changed().await.is_err() {
                return None;
            }
        }
    })
    .flatten()
}

#[derive(Debug, Deserialize)]
pub struct BufferQuery {
    #[serde(default)]
    pub include_replayed: bool,
}

async fn get_buffer(State(state): Shared, Query(q): Query<BufferQuery>) -> Result<Json<Value>, ApiError> {
    let path = state.cfg.buffer_path.clone();
    let entries = tokio::task::spawn_blocking(move || {
        let store = DiscrepancyStore::new(path);
        if q.include_replayed {
            store.entries()
        } else {
            store.pending()
        }
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))?
    .map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(Json(serde_json::to_value(entries).map_err(|e| ApiError::internal(e.to_string()))?))
}
