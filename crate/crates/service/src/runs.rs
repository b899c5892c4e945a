use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{mpsc, Arc, Mutex, RwLock};

use discharge_core::harness::{
    list_samples, read_sample, ConfigName, EpisodeResult, Harness, HarnessError, RunConfig, RunObserver, RunSummary,
};
use serde::{Deserialize, Serialize};
use tracing::{error, info};

use crate::events::{EventKind, EventLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunState {
    Queued,
    Running,
    Completed,
    Failed,
}

impl RunState {
    pub fn is_terminal(self) -> bool {
        matches!(self, RunState::Completed | RunState::Failed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub episodes_done: usize,
    pub episodes_total: usize,
}

/// Client view of a run. `summary` is present iff `state` is completed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHandle {
    pub run_id: String,
    pub state: RunState,
    pub config: RunConfig,
    pub progress: Progress,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<RunSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug)]
pub struct RunEntry {
    pub run_id: String,
    pub run_dir: PathBuf,
    pub handle: Mutex<RunHandle>,
    pub events: EventLog,
}

impl RunEntry {
    pub fn new(run_id: String, run_dir: PathBuf, config: RunConfig, episodes_total: usize) -> Self {
        let handle = RunHandle {
            run_id: run_id.clone(),
            state: RunState::Queued,
            config,
            progress: Progress { episodes_done: 0, episodes_total },
            summary: None,
            error: None,
        };
        Self { events: EventLog::new(run_id.clone()), run_id, run_dir, handle: Mutex::new(handle) }
    }

    pub fn snapshot(&self) -> RunHandle {
        self.handle.lock().expect("run handle lock").clone()
    }

    fn update(&self, f: impl FnOnce(&mut RunHandle)) {
        f(&mut self.handle.lock().expect("run handle lock"))
    }

    /// Moves to a terminal state once; later calls are ignored.
    fn finish(&self, outcome: Result<&RunSummary, String>) {
        let mut h = self.handle.lock().expect("run handle lock");
        if h.state.is_terminal() {
            return;
        }
        let (state, error) = match outcome {
            Ok(summary) => {
                h.summary = Some(summary.clone());
                (RunState::Completed, None)
            }
            Err(e) => (RunState::Failed, Some(e)),
        };
        h.state = state;
        h.error = error.clone();
        drop(h);
        self.events.push(EventKind::RunCompleted { state, error });
    }
}

/// All runs known to this process, in creation order.
#[derive(Debug, Default)]
pub struct Registry {
    runs: RwLock<Vec<Arc<RunEntry>>>,
    counter: AtomicUsize,
}

impl Registry {
    pub fn next_run_id(&self, name: ConfigName) -> String {
        format!("run-{:06}-{}", self.counter.fetch_add(1, Ordering::SeqCst) + 1, name)
    }

    pub fn insert(&self, entry: Arc<RunEntry>) {
        self.runs.write().expect("registry lock").push(entry);
    }

    pub fn get(&self, run_id: &str) -> Option<Arc<RunEntry>> {
        self.runs.read().expect("registry lock").iter().find(|e| e.run_id == run_id).cloned()
    }

    pub fn list(&self) -> Vec<RunHandle> {
        self.runs.read().expect("registry lock").iter().map(|e| e.snapshot()).collect()
    }

    /// Re-registers finished runs found under `out_dir` as completed, with
    /// events reconstructed from their sample files.
    pub fn rebuild(&self, out_dir: &Path) {
        let Ok(rd) = std::fs::read_dir(out_dir) else { return };
        let mut dirs: Vec<PathBuf> = rd.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
        dirs.sort();
        for dir in dirs {
            let Some(run_id) = dir.file_name().and_then(|n| n.to_str()).map(str::to_string) else { continue };
            let read = |name: &str| std::fs::read_to_string(dir.join(name)).ok();
            let (Some(cfg), Some(summary)) = (read("config.json"), read("summary.json")) else { continue };
            let (Ok(config), Ok(summary)) =
                (serde_json::from_str::<RunConfig>(&cfg), serde_json::from_str::<RunSummary>(&summary))
            else {
                continue;
            };
            let samples: Vec<EpisodeResult> = list_samples(&dir)
                .unwrap_or_default()
                .iter()
                .filter_map(|p| read_sample(p).ok())
                .collect();
            let entry = RunEntry::new(run_id.clone(), dir.clone(), config, samples.len());
            for (i, s) in samples.iter().enumerate() {
                entry.events.push(EventKind::EpisodeStarted {
                    episode_id: s.episode_id.clone(),
                    patient_id: s.patient_id.clone(),
                    index: i + 1,
                    total: samples.len(),
                });
                entry.events.push(EventKind::completed(s));
            }
            entry.update(|h| h.progress.episodes_done = samples.len());
            entry.finish(Ok(&summary));
            if let Some(n) = run_id.strip_prefix("run-").and_then(|r| r.get(..6)).and_then(|d| d.parse::<usize>().ok()) {
                self.counter.fetch_max(n, Ordering::SeqCst);
            }
            self.insert(Arc::new(entry));
        }
    }
}

/// One submission. Runs execute in order; non-replay runs share one harness
/// session so the context cache carries over between them.
pub struct Job {
    pub runs: Vec<(Harness, RunConfig, Arc<RunEntry>)>,
}

/// Feeds harness callbacks into run handles and event logs.
struct Observer {
    entries: HashMap<String, Arc<RunEntry>>,
}

impl RunObserver for Observer {
    fn episode_started(&self, run_id: &str, seq: usize, episode_id: &str, patient_id: &str) {
        if let Some(e) = self.entries.get(run_id) {
            let total = e.snapshot().progress.episodes_total;
            e.events.push(EventKind::EpisodeStarted {
                episode_id: episode_id.into(),
                patient_id: patient_id.into(),
                index: seq,
                total,
            });
        }
    }

    fn episode_completed(&self, run_id: &str, result: &EpisodeResult) {
        if let Some(e) = self.entries.get(run_id) {
            e.update(|h| h.progress.episodes_done += 1);
            e.events.push(EventKind::completed(result));
        }
    }

    fn run_completed(&self, run_id: &str, summary: Result<&RunSummary, &HarnessError>) {
        if let Some(e) = self.entries.get(run_id) {
            e.finish(summary.map_err(|err| err.to_string()));
        }
    }
}

/// Runs jobs one at a time on a dedicated thread.
pub fn spawn_worker(replay_active: Arc<AtomicBool>) -> mpsc::Sender<Job> {
    let (tx, rx) = mpsc::channel::<Job>();
    std::thread::Builder::new()
        .name("run-worker".into())
        .spawn(move || {
            for job in rx {
                let observer =
                    Observer { entries: job.runs.iter().map(|(_, _, e)| (e.run_id.clone(), e.clone())).collect() };
                for (harness, cfg, entry) in &job.runs {
                    let replay = cfg.name == ConfigName::BufferReplay;
                    if replay {
                        // The pending set may have grown while queued.
                        let pending = harness.buffer.pending().map(|p| p.len()).unwrap_or(0);
                        entry.update(|h| h.progress.episodes_total = pending.min(cfg.patient_limit));
                    }
                    entry.update(|h| h.state = RunState::Running);
                    info!(run_id = %entry.run_id, config = %cfg.name, "executing run");
                    if let Err(e) = harness.run(cfg, &entry.run_id, &entry.run_dir, &observer) {
                        error!(run_id = %entry.run_id, "run failed: {e}");
                        entry.finish(Err(e.to_string()));
                    }
                    if replay {
                        replay_active.store(false, Ordering::SeqCst);
                    }
                }
            }
        })
        .expect("spawn run worker");
    tx
}
