//! Discrepancy buffer: an append-only JSON-lines store of high-confidence
//! coverage failures awaiting replay.
//!
//! Updates append a superseding record for the same `entry_id`; on load the
//! latest record per id wins. A torn final line is skipped with a warning.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::auditor::AuditRecord;
use crate::planner::{ActionPlan, ActionType};

pub const DEFAULT_BUFFER_PATH: &str = "./data/discrepancy_buffer.jsonl";

#[derive(Debug, Error)]
pub enum BufferError {
    #[error("buffer i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown buffer entry: {0}")]
    UnknownEntry(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayOutcome {
    pub coverage_all: bool,
    pub run_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyEntry {
    pub entry_id: String,
    pub patient_id: String,
    pub run_id: String,
    pub config_name: String,
    pub plan: ActionPlan,
    pub confidence: f64,
    pub missing: Vec<ActionType>,
    pub created_at: DateTime<Utc>,
    pub replayed: bool,
    pub replay_outcome: Option<ReplayOutcome>,
}

pub fn entry_id(run_id: &str, episode_id: &str) -> String {
    format!("{run_id}:{episode_id}")
}

/// Run metadata attached to buffer entries.
#[derive(Debug, Clone)]
pub struct FlagContext<'a> {
    pub run_id: &'a str,
    pub config_name: &'a str,
    pub patient_id: &'a str,
    pub now: DateTime<Utc>,
}

/// An entry for the plan iff the audit raised the buffer flag.
pub fn flag(audit: &AuditRecord, plan: &ActionPlan, ctx: &FlagContext<'_>) -> Option<DiscrepancyEntry> {
    if !audit.buffer_flag {
        return None;
    }
    Some(DiscrepancyEntry {
        entry_id: entry_id(ctx.run_id, &audit.episode_id),
        patient_id: ctx.patient_id.to_string(),
        run_id: ctx.run_id.to_string(),
        config_name: ctx.config_name.to_string(),
        plan: plan.clone(),
        confidence: audit.confidence,
        missing: audit.coverage.missing.clone(),
        created_at: ctx.now,
        replayed: false,
        replay_outcome: None,
    })
}

#[derive(Debug, Default, Clone)]
pub struct BufferContents {
    /// Latest record per entry id, in order of first appearance.
    pub entries: Vec<DiscrepancyEntry>,
    /// Line numbers and reasons for records that could not be read.
    pub warnings: Vec<String>,
    pub lines: usize,
}

#[derive(Debug)]
pub struct DiscrepancyStore {
    path: PathBuf,
    write_lock: Mutex<()>,
}

impl DiscrepancyStore {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into(), write_lock: Mutex::new(()) }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn io(&self, source: std::io::Error) -> BufferError {
        BufferError::Io { path: self.path.clone(), source }
    }

    pub fn load(&self) -> Result<BufferContents, BufferError> {
        let text = match fs::read_to_string(&self.path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(BufferContents::default()),
            Err(e) => return Err(self.io(e)),
        };
        let mut contents = BufferContents::default();
        let mut slot: HashMap<String, usize> = HashMap::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            contents.lines += 1;
            match serde_json::from_str::<DiscrepancyEntry>(line) {
                Ok(entry) => match slot.get(&entry.entry_id) {
                    Some(&i) => contents.entries[i] = entry,
                    None => {
                        slot.insert(entry.entry_id.clone(), contents.entries.len());
                        contents.entries.push(entry);
                    }
                },
                Err(e) => {
                    let msg = format!("{}:{}: skipped unreadable record: {e}", self.path.display(), n + 1);
                    warn!("{msg}");
                    contents.warnings.push(msg);
                }
            }
        }
        Ok(contents)
    }

    pub fn entries(&self) -> Result<Vec<DiscrepancyEntry>, BufferError> {
        Ok(self.load()?.entries)
    }

    fn write_line(&self, entry: &DiscrepancyEntry) -> Result<(), BufferError> {
        if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| self.io(e))?;
        }
        let mut file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| self.io(e))?;
        let mut line = serde_json::to_string(entry).expect("entry serializes");
        line.push('\n');
        // Start a fresh line if a previous writer died mid-record.
        let len = file.metadata().map_err(|e| self.io(e))?.len();
        if len > 0 {
            let mut last = [0u8; 1];
            file.seek(SeekFrom::Start(len - 1)).map_err(|e| self.io(e))?;
            file.read_exact(&mut last).map_err(|e| self.io(e))?;
            if last[0] != b'\n' {
                line.insert(0, '\n');
            }
        }
        file.write_all(line.as_bytes()).map_err(|e| self.io(e))?;
        file.sync_data().map_err(|e| self.io(e))
    }

    /// Appends `entry` unless its id is already stored. Returns whether a line was written.
    pub fn append(&self, entry: &DiscrepancyEntry) -> Result<bool, BufferError> {
        let _guard = self.write_lock.lock().expect("buffer lock");
        if self.load()?.entries.iter().any(|e| e.entry_id == entry.entry_id) {
            return Ok(false);
        }
        self.write_line(entry)?;
        Ok(true)
    }

    /// Entries not yet replayed, ordered by creation time then id.
    pub fn pending(&self) -> Result<Vec<DiscrepancyEntry>, BufferError> {
        let mut out: Vec<_> = self.load()?.entries.into_iter().filter(|e| !e.replayed).collect();
        out.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.entry_id.cmp(&b.entry_id)));
        Ok(out)
    }

    pub fn mark_replayed(&self, entry_id: &str, outcome: ReplayOutcome) -> Result<(), BufferError> {
        let _guard = self.write_lock.lock().expect("buffer lock");
        let mut entry = self
            .load()?
            .entries
            .into_iter()
            .find(|e| e.entry_id == entry_id)
            .ok_or_else(|| BufferError::UnknownEntry(entry_id.to_string()))?;
        entry.replayed = true;
        entry.replay_outcome = Some(outcome);
        self.write_line(&entry)
    }
}
