//! Runs configurations over a cohort, audits every plan, logs per-sample
//! records and aggregates per-configuration summaries.

mod cohort;
mod config;
mod episode;
mod pareto;
mod report;
mod summary;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use thiserror::Error;

pub use cohort::Cohort;
pub use config::{ConfigName, RunConfig};
pub use episode::{
    episode_id, list_samples, read_sample, sample_path, samples_dir, write_sample, EpisodeResult,
    SAMPLE_SCHEMA_VERSION, SKIP_EMPTY_SNAPSHOT,
};
pub use pareto::{mark_dominated, pareto_frontier, ParetoPoint};
pub use report::{comparison_csv, comparison_markdown};
pub use summary::{aggregate, RunSummary};

use crate::auditor::{audit, AuditError, CalibrationAccumulator, DriftTracker};
use crate::buffer::{flag, BufferError, DiscrepancyEntry, DiscrepancyStore, FlagContext, ReplayOutcome};
use crate::clock::{millis, Clock, VirtualClock, WallClock};
use crate::guidelines::RetrievalIndex;
use crate::hash::Fnv1a;
use crate::ingest::{filter_active, ActiveFilterPolicy};
use crate::planner::{
    BackendError, ContextCache, HttpBackend, HttpBackendConfig, Planner, PlannerBackend, RefinementHint,
    ScriptedBackend, ScriptedPolicy,
};
use crate::snapshot::{is_eligible, summarize};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no non-skipped episodes to aggregate")]
    NoEpisodes,
    #[error("discrepancy buffer has no pending entries")]
    EmptyBuffer,
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Malformed { path: PathBuf, message: String },
    #[error(transparent)]
    Buffer(#[from] BufferError),
    #[error(transparent)]
    Audit(AuditError),
}

/// Progress callbacks. Called from worker threads when `worker_count > 1`.
pub trait RunObserver: Send + Sync {
    fn episode_started(&self, _run_id: &str, _seq: usize, _episode_id: &str, _patient_id: &str) {}
    fn episode_completed(&self, _run_id: &str, _result: &EpisodeResult) {}
    fn run_completed(&self, _run_id: &str, _summary: Result<&RunSummary, &HarnessError>) {}
}

#[derive(Debug, Default, Clone, Copy)]
pub struct NoopObserver;

impl RunObserver for NoopObserver {}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run_id: String,
    pub run_dir: PathBuf,
    pub summary: RunSummary,
    pub episodes: Vec<EpisodeResult>,
}

struct Job {
    seq: usize,
    patient_id: String,
    hint: Option<RefinementHint>,
    replay_of: Option<String>,
}

struct AuditState {
    drift: DriftTracker,
    calib: CalibrationAccumulator,
}

/// Shared services for a session of runs.
#[derive(Clone)]
pub struct Harness {
    pub cohort: Arc<Cohort>,
    pub planner: Planner,
    pub buffer: Arc<DiscrepancyStore>,
    pub filter: ActiveFilterPolicy,
    /// When set, buffer timestamps are this instant plus clock time, so runs on
    /// a virtual clock write identical buffers.
    pub timestamp_base: Option<DateTime<Utc>>,
}

/// Run id for a replay over the given pending entries.
pub fn replay_run_id(pending: &[DiscrepancyEntry]) -> String {
    let mut h = Fnv1a::new();
    for e in pending {
        h.field(e.entry_id.as_bytes());
    }
    format!("{}-{}", ConfigName::BufferReplay, &h.hex()[..8])
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

/// Which planner backend a session uses.
#[derive(Debug, Clone)]
pub enum BackendSpec {
    Scripted(ScriptedPolicy),
    Http(HttpBackendConfig),
}

/// Buffer timestamps of virtual-clock sessions start here.
pub fn virtual_epoch() -> DateTime<Utc> {
    DateTime::from_timestamp(1_735_689_600, 0).expect("valid epoch")
}

impl Harness {
    /// A wall-clock session around an arbitrary backend.
    pub fn new(
        cohort: Cohort,
        index: RetrievalIndex,
        backend: Arc<dyn PlannerBackend>,
        buffer: DiscrepancyStore,
    ) -> Self {
        Self::with_clock(cohort, index, backend, Arc::new(WallClock::new()), buffer, None)
    }

    /// A scripted session on a virtual clock: latencies, summaries and buffer
    /// contents depend only on the inputs and `seed`.
    pub fn scripted(
        cohort: Cohort,
        index: RetrievalIndex,
        policy: ScriptedPolicy,
        seed: u64,
        buffer: DiscrepancyStore,
    ) -> Self {
        let clock = VirtualClock::new();
        let backend = ScriptedBackend::new(policy, seed).with_virtual_clock(clock.clone());
        Self::with_clock(cohort, index, Arc::new(backend), clock, buffer, Some(virtual_epoch()))
    }

    /// The session the CLI and the service both use for a backend choice.
    pub fn from_spec(
        cohort: Cohort,
        index: RetrievalIndex,
        spec: &BackendSpec,
        seed: u64,
        buffer: DiscrepancyStore,
    ) -> Result<Self, BackendError> {
        Ok(match spec {
            BackendSpec::Scripted(policy) => Self::scripted(cohort, index, policy.clone(), seed, buffer),
            BackendSpec::Http(cfg) => Self::new(cohort, index, Arc::new(HttpBackend::new(cfg.clone())?), buffer),
        })
    }

    pub fn with_clock(
        cohort: Cohort,
        index: RetrievalIndex,
        backend: Arc<dyn PlannerBackend>,
        clock: Arc<dyn Clock>,
        buffer: DiscrepancyStore,
        timestamp_base: Option<DateTime<Utc>>,
    ) -> Self {
        Self {
            cohort: Arc::new(cohort),
            planner: Planner {
                backend,
                index: Arc::new(index),
                cache: Arc::new(ContextCache::new()),
                clock,
            },
            buffer: Arc::new(buffer),
            filter: ActiveFilterPolicy::default(),
            timestamp_base,
        }
    }

    fn now(&self) -> DateTime<Utc> {
        match self.timestamp_base {
            Some(base) => base + chrono::Duration::from_std(self.planner.clock.elapsed()).unwrap_or_default(),
            None => Utc::now(),
        }
    }

    /// Runs one configuration; `buffer_replay` reads its episodes from the
    /// pending buffer entries instead of the cohort.
    pub fn run(
        &self,
        cfg: &RunConfig,
        run_id: &str,
        run_dir: &Path,
        observer: &dyn RunObserver,
    ) -> Result<RunOutcome, HarnessError> {
        cfg.validate()?;
        let jobs: Vec<Job> = if cfg.name == ConfigName::BufferReplay {
            let pending = self.buffer.pending()?;
            if pending.is_empty() {
                return Err(HarnessError::EmptyBuffer);
            }
            pending
                .into_iter()
                .take(cfg.patient_limit)
                .enumerate()
                .map(|(i, e)| Job {
                    seq: i + 1,
                    patient_id: e.patient_id.clone(),
                    hint: Some(RefinementHint { prior_draft: Some(e.plan.to_wire_json()), missing: e.missing.clone() }),
                    replay_of: Some(e.entry_id),
                })
                .collect()
        } else {
            self.cohort
                .patient_ids()
                .iter()
                .take(cfg.patient_limit)
                .enumerate()
                .map(|(i, p)| Job { seq: i + 1, patient_id: p.clone(), hint: None, replay_of: None })
                .collect()
        };
        self.execute(cfg, run_id, run_dir, jobs, observer)
    }

    fn execute(
        &self,
        cfg: &RunConfig,
        run_id: &str,
        run_dir: &Path,
        jobs: Vec<Job>,
        observer: &dyn RunObserver,
    ) -> Result<RunOutcome, HarnessError> {
        let sdir = samples_dir(run_dir);
        std::fs::create_dir_all(&sdir).map_err(io_err(&sdir))?;
        let cfg_path = run_dir.join("config.json");
        let cfg_body = serde_json::to_string_pretty(cfg).expect("config serializes") + "\n";
        std::fs::write(&cfg_path, cfg_body).map_err(io_err(&cfg_path))?;
        tracing::info!(run_id, config = %cfg.name, episodes = jobs.len(), "run started");
        let clock = &self.planner.clock;
        let start = clock.elapsed();
        let state = Mutex::new(AuditState {
            drift: DriftTracker::new(cfg.drift_threshold),
            calib: CalibrationAccumulator::new(cfg.bin_count),
        });

        let outcome: Result<Vec<EpisodeResult>, HarnessError> = if cfg.worker_count <= 1 || jobs.len() <= 1 {
            jobs.iter().map(|j| self.episode(cfg, run_id, run_dir, j, &state, observer)).collect()
        } else {
            let next = AtomicUsize::new(0);
            let slots: Vec<Mutex<Option<Result<EpisodeResult, HarnessError>>>> =
                jobs.iter().map(|_| Mutex::new(None)).collect();
            std::thread::scope(|s| {
                for _ in 0..cfg.worker_count.min(jobs.len()) {
                    s.spawn(|| loop {
                        let i = next.fetch_add(1, Ordering::SeqCst);
                        let Some(job) = jobs.get(i) else { break };
                        let r = self.episode(cfg, run_id, run_dir, job, &state, observer);
                        *slots[i].lock().expect("slot lock") = Some(r);
                    });
                }
            });
            slots.into_iter().map(|m| m.into_inner().expect("slot lock").expect("every job ran")).collect()
        };
        let episodes = match outcome {
            Ok(e) => e,
            Err(e) => {
                observer.run_completed(run_id, Err(&e));
                return Err(e);
            }
        };

        let elapsed = clock.elapsed().saturating_sub(start);
        match aggregate(cfg.name, &episodes, cfg.bin_count, elapsed) {
            Ok(summary) => {
                let path = run_dir.join("summary.json");
                let body = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
                std::fs::write(&path, body).map_err(io_err(&path))?;
                tracing::info!(run_id, coverage = summary.coverage_all_rate, n = summary.n, "run finished");
                observer.run_completed(run_id, Ok(&summary));
                Ok(RunOutcome { run_id: run_id.to_string(), run_dir: run_dir.to_path_buf(), summary, episodes })
            }
            Err(e) => {
                observer.run_completed(run_id, Err(&e));
                Err(e)
            }
        }
    }

    fn episode(
        &self,
        cfg: &RunConfig,
        run_id: &str,
        run_dir: &Path,
        job: &Job,
        state: &Mutex<AuditState>,
        observer: &dyn RunObserver,
    ) -> Result<EpisodeResult, HarnessError> {
        let eid = episode_id(job.seq, &job.patient_id);
        observer.episode_started(run_id, job.seq, &eid, &job.patient_id);
        let clock = &self.planner.clock;
        let t0 = clock.elapsed();
        let latency = || millis(clock.elapsed().saturating_sub(t0));
        let skip = |hash: Option<String>, reason: String| {
            tracing::debug!(episode = %eid, %reason, "episode skipped");
            EpisodeResult::skipped(eid.clone(), job.patient_id.clone(), cfg.name, hash, reason, latency())
        };

        let result = match self.cohort.fetch(&job.patient_id) {
            Err(e) => skip(None, format!("fetch_error: {e}")),
            Ok(bundle) => {
                let snapshot = summarize(&filter_active(&bundle, &self.filter));
                let hash = snapshot.content_hash().to_string();
                if !is_eligible(&snapshot) {
                    skip(Some(hash), SKIP_EMPTY_SNAPSHOT.to_string())
                } else {
                    match self.planner.plan_with_hint(&snapshot, &eid, &cfg.planner_config(), job.hint.clone()) {
                        Err(e) => skip(Some(hash), format!("planner_error: {e}")),
                        Ok(planned) => {
                            let record = {
                                let mut st = state.lock().expect("audit state lock");
                                let st = &mut *st;
                                let record = audit(&planned.plan, &mut st.drift, &mut st.calib, cfg.conf_threshold);
                                let ctx = FlagContext {
                                    run_id,
                                    config_name: cfg.name.as_str(),
                                    patient_id: &job.patient_id,
                                    now: self.now(),
                                };
                                if let Some(entry) = flag(&record, &planned.plan, &ctx) {
                                    self.buffer.append(&entry)?;
                                }
                                record
                            };
                            if let Some(original) = &job.replay_of {
                                let outcome =
                                    ReplayOutcome { coverage_all: record.coverage.coverage_all, run_id: run_id.into() };
                                self.buffer.mark_replayed(original, outcome)?;
                            }
                            EpisodeResult {
                                schema_version: SAMPLE_SCHEMA_VERSION,
                                episode_id: eid.clone(),
                                patient_id: job.patient_id.clone(),
                                config_name: cfg.name,
                                snapshot_hash: Some(hash),
                                cache_hit: planned.telemetry.cache_hit,
                                refine_iterations: planned.telemetry.refine_iterations,
                                plan: Some(planned.plan),
                                audit: Some(record),
                                latency_ms: latency(),
                                skipped: false,
                                skip_reason: None,
                                telemetry: Some(planned.telemetry),
                                extra: Default::default(),
                            }
                        }
                    }
                }
            }
        };
        write_sample(run_dir, &result)?;
        observer.episode_completed(run_id, &result);
        Ok(result)
    }
}

/// Writes `summary.json` (array), `comparison.csv` and `comparison.md`.
pub fn write_comparison(out_dir: &Path, summaries: &[RunSummary]) -> Result<(), HarnessError> {
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let files = [
        ("summary.json", serde_json::to_string_pretty(summaries).expect("summaries serialize") + "\n"),
        ("comparison.csv", comparison_csv(summaries)),
        ("comparison.md", comparison_markdown(summaries)),
    ];
    for (name, body) in files {
        let path = out_dir.join(name);
        std::fs::write(&path, body).map_err(io_err(&path))?;
    }
    Ok(())
}

/// Reads a `summary.json` holding either one summary or an array of them.
pub fn read_summaries(path: &Path) -> Result<Vec<RunSummary>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let malformed = |e: serde_json::Error| HarnessError::Malformed { path: path.into(), message: e.to_string() };
    let v: serde_json::Value = serde_json::from_str(&text).map_err(malformed)?;
    if v.is_array() {
        serde_json::from_value(v).map_err(malformed)
    } else {
        serde_json::from_value(v).map(|s| vec![s]).map_err(malformed)
    }
}
