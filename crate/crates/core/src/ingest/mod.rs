//! FHIR R4 ingestion: resource parsing, NDJSON/bundle file loading, REST
//! retrieval and per-patient bundle assembly.

mod client;
mod resource;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};

use chrono::Duration;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use client::{FhirClient, FhirClientConfig, DEFAULT_PAGE_CAP};
pub use resource::{
    normalize_patient_ref, parse_fhir_datetime, parse_resource, FhirResource, ResourceKind,
};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("unsupported resource type: {0}")]
    UnsupportedResourceType(String),
    #[error("malformed resource: {0}")]
    MalformedResource(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("FHIR server returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("patient not found: {0}")]
    NotFound(String),
    #[error("request timed out after {0:?}")]
    Timeout(std::time::Duration),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("invalid filter policy: {0}")]
    InvalidPolicy(String),
}

/// A non-fatal problem encountered while loading or assembling resources.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct IngestWarning {
    pub location: String,
    pub message: String,
}

impl fmt::Display for IngestWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

#[derive(Debug, Default, Clone)]
pub struct LoadReport {
    pub resources: Vec<FhirResource>,
    pub warnings: Vec<IngestWarning>,
}

/// Loads resources from an NDJSON file, a FHIR `Bundle` JSON file, or a
/// directory of such files (read in file-name order).
///
/// Lines that fail to parse become warnings; only an unreadable path is an error.
pub fn load_ndjson(path: impl AsRef<Path>) -> Result<LoadReport, IngestError> {
    let path = path.as_ref();
    let io = |source| IngestError::Io { path: path.to_path_buf(), source };
    let meta = fs::metadata(path).map_err(io)?;
    let mut report = LoadReport::default();
    if meta.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.is_file()
                    && matches!(
                        p.extension().and_then(|e| e.to_str()),
                        Some("ndjson" | "jsonl" | "json")
                    )
            })
            .collect();
        files.sort();
        for file in files {
            load_file(&file, &mut report)?;
        }
    } else {
        load_file(path, &mut report)?;
    }
    Ok(report)
}

fn load_file(path: &Path, report: &mut LoadReport) -> Result<(), IngestError> {
    let text = fs::read_to_string(path)
        .map_err(|source| IngestError::Io { path: path.to_path_buf(), source })?;
    let name = path.display().to_string();
    if path.extension().and_then(|e| e.to_str()) == Some("json") {
        ingest_document(&text, &name, report);
        return Ok(());
    }
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        ingest_document(line, &format!("{name}:{}", n + 1), report);
    }
    Ok(())
}

/// Parses one JSON document that is either a single resource or a `Bundle`.
fn ingest_document(text: &str, location: &str, report: &mut LoadReport) {
    let warn = |report: &mut LoadReport, message: String| {
        report.warnings.push(IngestWarning { location: location.to_string(), message })
    };
    let value: Value = match serde_json::from_str(text) {
        Ok(v) => v,
        Err(e) => return warn(report, format!("invalid JSON: {e}")),
    };
    if value.get("resourceType").and_then(Value::as_str) == Some("Bundle") {
        let (resources, problems) = bundle_entries(&value);
        report.resources.extend(resources);
        for p in problems {
            warn(report, p);
        }
        return;
    }
    match resource::from_value(&value, text.to_string()) {
        Ok(r) => report.resources.push(r),
        Err(e) => warn(report, e.to_string()),
    }
}

/// Extracts supported resources from `Bundle.entry[].resource`.
pub(crate) fn bundle_entries(bundle: &Value) -> (Vec<FhirResource>, Vec<String>) {
    let mut resources = Vec::new();
    let mut problems = Vec::new();
    let entries = bundle.get("entry").and_then(Value::as_array).map(Vec::as_slice).unwrap_or(&[]);
    for (i, entry) in entries.iter().enumerate() {
        let Some(res) = entry.get("resource") else {
            problems.push(format!("entry {i}: no resource"));
            continue;
        };
        // OperationOutcome and friends can ride along in search bundles.
        let raw = serde_json::to_string(res).unwrap_or_default();
        match resource::from_value(res, raw) {
            Ok(r) => resources.push(r),
            Err(e) => problems.push(format!("entry {i}: {e}")),
        }
    }
    (resources, problems)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BundleSource {
    Files,
    RestServer,
}

/// All supported resources for one patient, each list sorted by
/// `(timestamp, id)` with missing timestamps first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientBundle {
    pub patient_id: String,
    pub patient: FhirResource,
    pub encounters: Vec<FhirResource>,
    pub conditions: Vec<FhirResource>,
    pub medication_requests: Vec<FhirResource>,
    pub observations: Vec<FhirResource>,
    pub procedures: Vec<FhirResource>,
    pub source: BundleSource,
}

impl PatientBundle {
    pub fn new(patient: FhirResource, source: BundleSource) -> Self {
        Self {
            patient_id: patient.id.clone(),
            patient,
            encounters: Vec::new(),
            conditions: Vec::new(),
            medication_requests: Vec::new(),
            observations: Vec::new(),
            procedures: Vec::new(),
            source,
        }
    }

    pub fn list(&self, kind: ResourceKind) -> &[FhirResource] {
        match kind {
            ResourceKind::Patient => std::slice::from_ref(&self.patient),
            ResourceKind::Encounter => &self.encounters,
            ResourceKind::Condition => &self.conditions,
            ResourceKind::MedicationRequest => &self.medication_requests,
            ResourceKind::Observation => &self.observations,
            ResourceKind::Procedure => &self.procedures,
        }
    }

    fn list_mut(&mut self, kind: ResourceKind) -> Option<&mut Vec<FhirResource>> {
        Some(match kind {
            ResourceKind::Patient => return None,
            ResourceKind::Encounter => &mut self.encounters,
            ResourceKind::Condition => &mut self.conditions,
            ResourceKind::MedicationRequest => &mut self.medication_requests,
            ResourceKind::Observation => &mut self.observations,
            ResourceKind::Procedure => &mut self.procedures,
        })
    }

    /// Every non-Patient resource, kind by kind.
    pub fn clinical_resources(&self) -> impl Iterator<Item = &FhirResource> {
        self.encounters
            .iter()
            .chain(&self.conditions)
            .chain(&self.medication_requests)
            .chain(&self.observations)
            .chain(&self.procedures)
    }

    pub fn is_empty(&self) -> bool {
        self.clinical_resources().next().is_none()
    }

    fn sort_lists(&mut self) {
        for kind in CLINICAL_KINDS {
            if let Some(list) = self.list_mut(kind) {
                list.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
            }
        }
    }
}

const CLINICAL_KINDS: [ResourceKind; 5] = [
    ResourceKind::Encounter,
    ResourceKind::Condition,
    ResourceKind::MedicationRequest,
    ResourceKind::Observation,
    ResourceKind::Procedure,
];

#[derive(Debug, Default, Clone)]
pub struct AssembleReport {
    pub bundles: Vec<PatientBundle>,
    pub warnings: Vec<IngestWarning>,
}

/// Groups resources into per-patient bundles ordered by patient id.
///
/// The result does not depend on input order: duplicate `(kind, id)` pairs
/// keep the lexicographically smallest raw text, and warnings are sorted.
pub fn assemble_bundles(resources: Vec<FhirResource>) -> AssembleReport {
    let mut unique: BTreeMap<(ResourceKind, String), FhirResource> = BTreeMap::new();
    let mut warnings = Vec::new();
    for r in resources {
        let key = (r.kind, r.id.clone());
        match unique.get(&key) {
            Some(existing) => {
                warnings.push(IngestWarning {
                    location: format!("{}/{}", r.kind, r.id),
                    message: "duplicate resource id".into(),
                });
                if r.raw < existing.raw {
                    unique.insert(key, r);
                }
            }
            None => {
                unique.insert(key, r);
            }
        }
    }

    let mut bundles: BTreeMap<String, PatientBundle> = BTreeMap::new();
    let mut rest = Vec::new();
    for ((kind, _), r) in unique {
        if kind == ResourceKind::Patient {
            bundles.insert(r.id.clone(), PatientBundle::new(r, BundleSource::Files));
        } else {
            rest.push(r);
        }
    }
    for r in rest {
        let target = r.patient_id().and_then(|pid| bundles.get_mut(pid));
        match target {
            Some(bundle) => bundle.list_mut(r.kind).expect("clinical kind").push(r),
            None => warnings.push(IngestWarning {
                location: format!("{}/{}", r.kind, r.id),
                message: match &r.patient_ref {
                    Some(p) => format!("references missing {p}; dropped"),
                    None => "no patient reference; dropped".into(),
                },
            }),
        }
    }
    let bundles = bundles
        .into_values()
        .map(|mut b| {
            b.sort_lists();
            b
        })
        .collect();
    warnings.sort();
    AssembleReport { bundles, warnings }
}

/// Which resources count as "active" for a patient.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveFilterPolicy {
    /// Accepted condition clinical status codes; `None` keeps every condition.
    pub condition_statuses: Option<BTreeSet<String>>,
    /// Accepted medication request status codes; `None` keeps every request.
    pub medication_statuses: Option<BTreeSet<String>>,
    /// Observations older than this many hours before the bundle's newest
    /// timestamp are dropped. `None` keeps all observations.
    pub observation_recency_hours: Option<u32>,
    /// Per-kind cap, keeping the most recent items.
    pub max_items_per_kind: Option<NonZeroUsize>,
}

impl Default for ActiveFilterPolicy {
    fn default() -> Self {
        let set = |xs: &[&str]| Some(xs.iter().map(|s| s.to_string()).collect());
        Self {
            condition_statuses: set(&["active", "recurrence", "relapse"]),
            medication_statuses: set(&["active"]),
            observation_recency_hours: None,
            max_items_per_kind: None,
        }
    }
}

impl ActiveFilterPolicy {
    pub fn keep_all() -> Self {
        Self {
            condition_statuses: None,
            medication_statuses: None,
            observation_recency_hours: None,
            max_items_per_kind: None,
        }
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if self.observation_recency_hours == Some(0) {
            return Err(IngestError::InvalidPolicy("observation_recency_hours must be positive".into()));
        }
        Ok(())
    }

    /// Whether a resource passes the status/recency predicate. The cap is not part of it.
    pub fn admits(&self, r: &FhirResource, reference: Option<chrono::DateTime<chrono::Utc>>) -> bool {
        let in_set = |set: &Option<BTreeSet<String>>| set.as_ref().is_none_or(|s| s.contains(&r.status));
        match r.kind {
            ResourceKind::Condition => in_set(&self.condition_statuses),
            ResourceKind::MedicationRequest => in_set(&self.medication_statuses),
            ResourceKind::Observation => match (self.observation_recency_hours, reference) {
                (None, _) => true,
                (Some(_), None) => false,
                (Some(h), Some(latest)) => r
                    .timestamp
                    .is_some_and(|t| t >= latest - Duration::hours(i64::from(h))),
            },
            _ => true,
        }
    }
}

/// Newest timestamp across all clinical resources; the anchor for observation recency.
pub fn latest_timestamp(bundle: &PatientBundle) -> Option<chrono::DateTime<chrono::Utc>> {
    bundle.clinical_resources().filter_map(|r| r.timestamp).max()
}

pub fn filter_active(bundle: &PatientBundle, policy: &ActiveFilterPolicy) -> PatientBundle {
    let reference = latest_timestamp(bundle);
    let mut out = bundle.clone();
    for kind in CLINICAL_KINDS {
        let list = out.list_mut(kind).expect("clinical kind");
        list.retain(|r| policy.admits(r, reference));
        if let Some(cap) = policy.max_items_per_kind {
            // Lists are ascending by time, so the most recent items are at the end.
            let excess = list.len().saturating_sub(cap.get());
            list.drain(..excess);
        }
    }
    out
}
