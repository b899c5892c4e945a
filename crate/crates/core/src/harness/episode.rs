use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::config::ConfigName;
use super::HarnessError;
use crate::auditor::AuditRecord;
use crate::planner::{ActionPlan, EpisodeTelemetry};

pub const SAMPLE_SCHEMA_VERSION: u32 = 1;

pub const SKIP_EMPTY_SNAPSHOT: &str = "empty_snapshot";

/// One episode outcome; also the per-sample log record on disk.
///
/// Unknown keys found when reading a record are kept in `extra` and written
/// back unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub schema_version: u32,
    pub episode_id: String,
    pub patient_id: String,
    pub config_name: ConfigName,
    pub snapshot_hash: Option<String>,
    pub plan: Option<ActionPlan>,
    pub audit: Option<AuditRecord>,
    pub latency_ms: f64,
    pub cache_hit: bool,
    pub refine_iterations: u32,
    pub skipped: bool,
    pub skip_reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub telemetry: Option<EpisodeTelemetry>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

impl EpisodeResult {
    pub fn skipped(
        episode_id: String,
        patient_id: String,
        config_name: ConfigName,
        snapshot_hash: Option<String>,
        reason: impl Into<String>,
        latency_ms: f64,
    ) -> Self {
        Self {
            schema_version: SAMPLE_SCHEMA_VERSION,
            episode_id,
            patient_id,
            config_name,
            snapshot_hash,
            plan: None,
            audit: None,
            latency_ms,
            cache_hit: false,
            refine_iterations: 0,
            skipped: true,
            skip_reason: Some(reason.into()),
            telemetry: None,
            extra: BTreeMap::new(),
        }
    }

    /// Skipped records carry no plan or audit; others carry both.
    pub fn is_consistent(&self) -> bool {
        if self.skipped {
            self.plan.is_none() && self.audit.is_none() && self.skip_reason.is_some()
        } else {
            self.plan.is_some() && self.audit.is_some()
        }
    }
}

/// `0001-p001` style identifiers sort in run order.
pub fn episode_id(seq: usize, patient_id: &str) -> String {
    format!("{seq:04}-{patient_id}")
}

pub fn samples_dir(run_dir: &Path) -> PathBuf {
    run_dir.join("samples")
}

pub fn sample_path(run_dir: &Path, episode_id: &str) -> PathBuf {
    samples_dir(run_dir).join(format!("{episode_id}.json"))
}

pub fn write_sample(run_dir: &Path, result: &EpisodeResult) -> Result<PathBuf, HarnessError> {
    let path = sample_path(run_dir, &result.episode_id);
    let body = serde_json::to_string_pretty(result).expect("episode result serializes");
    std::fs::write(&path, body + "\n").map_err(|source| HarnessError::Io { path: path.clone(), source })?;
    Ok(path)
}

pub fn read_sample(path: &Path) -> Result<EpisodeResult, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io { path: path.into(), source })?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Malformed { path: path.into(), message: e.to_string() })
}

/// Sample files of a run, sorted by file name (and so by episode sequence).
pub fn list_samples(run_dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let dir = samples_dir(run_dir);
    let rd = match std::fs::read_dir(&dir) {
        Ok(rd) => rd,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(source) => return Err(HarnessError::Io { path: dir, source }),
    };
    let mut out = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|source| HarnessError::Io { path: dir.clone(), source })?;
        let p = entry.path();
        if p.extension().is_some_and(|e| e == "json") {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}
