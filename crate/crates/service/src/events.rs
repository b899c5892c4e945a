use std::sync::Mutex;

use discharge_core::auditor::{AuditRecord, Lane, Verdict};
use discharge_core::harness::EpisodeResult;
use discharge_core::planner::ActionType;
use serde::{Deserialize, Serialize};
use tokio::sync::watch;

use crate::runs::RunState;

/// The audit fields a live log needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditDigest {
    pub verdict: Verdict,
    pub lane: Lane,
    pub coverage_all: bool,
    pub missing: Vec<ActionType>,
    pub confidence: f64,
    pub drift_l1: f64,
    pub drift_warning: bool,
    pub high_conf_error: bool,
}

impl From<&AuditRecord> for AuditDigest {
    fn from(a: &AuditRecord) -> Self {
        Self {
            verdict: a.verdict,
            lane: a.lane,
            coverage_all: a.coverage.coverage_all,
            missing: a.coverage.missing.clone(),
            confidence: a.confidence,
            drift_l1: a.drift_l1,
            drift_warning: a.drift_warning,
            high_conf_error: a.high_conf_error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventKind {
    EpisodeStarted {
        episode_id: String,
        patient_id: String,
        index: usize,
        total: usize,
    },
    EpisodeCompleted {
        episode_id: String,
        patient_id: String,
        skipped: bool,
        skip_reason: Option<String>,
        latency_ms: f64,
        audit: Option<AuditDigest>,
    },
    RunCompleted {
        state: RunState,
        error: Option<String>,
    },
}

impl EventKind {
    pub fn completed(result: &EpisodeResult) -> Self {
        EventKind::EpisodeCompleted {
            episode_id: result.episode_id.clone(),
            patient_id: result.patient_id.clone(),
            skipped: result.skipped,
            skip_reason: result.skip_reason.clone(),
            latency_ms: result.latency_ms,
            audit: result.audit.as_ref().map(AuditDigest::from),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEvent {
    /// 1-based, gap-free within a run.
    pub seq: u64,
    pub run_id: String,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// Append-only event history of one run with change notification.
#[derive(Debug)]
pub struct EventLog {
    run_id: String,
    events: Mutex<Vec<RunEvent>>,
    tx: watch::Sender<u64>,
}

impl EventLog {
    pub fn new(run_id: impl Into<String>) -> Self {
        Self { run_id: run_id.into(), events: Mutex::new(Vec::new()), tx: watch::channel(0).0 }
    }

    pub fn push(&self, kind: EventKind) -> u64 {
        let mut events = self.events.lock().expect("event log lock");
        let seq = events.len() as u64 + 1;
        events.push(RunEvent { seq, run_id: self.run_id.clone(), kind });
        self.tx.send_replace(seq);
        seq
    }

    /// Events with `seq > after`, and whether the run has finished.
    pub fn since(&self, after: u64) -> (Vec<RunEvent>, bool) {
        let events = self.events.lock().expect("event log lock");
        let closed = matches!(events.last(), Some(RunEvent { kind: EventKind::RunCompleted { .. }, .. }));
        (events.iter().skip(after as usize).cloned().collect(), closed)
    }

    pub fn len(&self) -> usize {
        self.events.lock().expect("event log lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_closed(&self) -> bool {
        self.since(u64::MAX).1
    }

    pub fn subscribe(&self) -> watch::Receiver<u64> {
        self.tx.subscribe()
    }
}
