//! Deterministic, template-based flattening of a patient bundle.
//!
//! The narrative only ever contains strings copied from the bundle. Lists are
//! rendered newest-first and truncated to [`SECTION_ITEM_CAP`] lines with an
//! exact "… and K more" remainder.

use std::fmt::Write as _;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::hash::Fnv1a;
use crate::ingest::{FhirResource, PatientBundle};

pub const SUMMARY_TEMPLATE_VERSION: &str = "summary-template/1";
pub const SECTION_ITEM_CAP: usize = 20;

/// Narrative section titles, in render order after Demographics.
pub const SECTION_TITLES: [&str; 5] =
    ["Active Conditions", "Active Medications", "Recent Observations", "Procedures", "Encounters"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotItem {
    pub display: String,
    pub status: String,
    pub timestamp: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotCounts {
    pub conditions: usize,
    pub medications: usize,
    pub observations: usize,
    pub procedures: usize,
    pub encounters: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotMetadata {
    pub generated_at: DateTime<Utc>,
    pub template_version: String,
    pub counts: SnapshotCounts,
    /// 16 hex digits of FNV-1a over the canonical content (never the generation time).
    pub content_hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientSnapshot {
    pub patient_id: String,
    pub text_summary: String,
    pub conditions: Vec<SnapshotItem>,
    pub medications: Vec<SnapshotItem>,
    pub observations: Vec<SnapshotItem>,
    pub procedures: Vec<SnapshotItem>,
    pub encounters: Vec<SnapshotItem>,
    pub metadata: SnapshotMetadata,
}

impl PatientSnapshot {
    /// The five structured lists in narrative section order.
    pub fn sections(&self) -> [(&'static str, &[SnapshotItem]); 5] {
        [
            (SECTION_TITLES[0], &self.conditions),
            (SECTION_TITLES[1], &self.medications),
            (SECTION_TITLES[2], &self.observations),
            (SECTION_TITLES[3], &self.procedures),
            (SECTION_TITLES[4], &self.encounters),
        ]
    }

    pub fn content_hash(&self) -> &str {
        &self.metadata.content_hash
    }

    /// Stable-key-order JSON used in logs and as cache key material.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("snapshot serializes")
    }
}

fn items(resources: &[FhirResource]) -> Vec<SnapshotItem> {
    let mut out: Vec<SnapshotItem> = resources
        .iter()
        .map(|r| SnapshotItem { display: r.display.clone(), status: r.status.clone(), timestamp: r.timestamp })
        .collect();
    out.sort_by(|a, b| {
        b.timestamp
            .cmp(&a.timestamp)
            .then_with(|| a.display.cmp(&b.display))
            .then_with(|| a.status.cmp(&b.status))
    });
    out
}

fn demographics(bundle: &PatientBundle) -> String {
    let value: Value = serde_json::from_str(&bundle.patient.raw).unwrap_or(Value::Null);
    let field = |k: &str| value.get(k).and_then(Value::as_str).unwrap_or("unknown").to_string();
    format!("gender {}; birth date {}", field("gender"), field("birthDate"))
}

pub fn format_timestamp(ts: &DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::Secs, true)
}

fn render_item(item: &SnapshotItem) -> String {
    let time = item.timestamp.as_ref().map(format_timestamp).unwrap_or_else(|| "n/a".into());
    format!("- {} [status: {}; time: {}]", item.display, item.status, time)
}

#[derive(Serialize)]
struct CanonicalContent<'a> {
    template_version: &'a str,
    patient_id: &'a str,
    demographics: &'a str,
    lists: [&'a [SnapshotItem]; 5],
}

pub fn summarize(bundle: &PatientBundle) -> PatientSnapshot {
    summarize_at(bundle, Utc::now())
}

/// [`summarize`] with an explicit generation time.
pub fn summarize_at(bundle: &PatientBundle, generated_at: DateTime<Utc>) -> PatientSnapshot {
    let conditions = items(&bundle.conditions);
    let medications = items(&bundle.medication_requests);
    let observations = items(&bundle.observations);
    let procedures = items(&bundle.procedures);
    let encounters = items(&bundle.encounters);
    let demographics = demographics(bundle);

    let mut text = String::new();
    let _ = writeln!(text, "Patient {}", bundle.patient_id);
    let _ = writeln!(text, "Demographics: {demographics}");
    let lists: [&[SnapshotItem]; 5] = [&conditions, &medications, &observations, &procedures, &encounters];
    for (title, list) in SECTION_TITLES.iter().zip(lists) {
        if list.is_empty() {
            let _ = writeln!(text, "{title}: none");
            continue;
        }
        let _ = writeln!(text, "{title}:");
        for item in list.iter().take(SECTION_ITEM_CAP) {
            let _ = writeln!(text, "{}", render_item(item));
        }
        if list.len() > SECTION_ITEM_CAP {
            let _ = writeln!(text, "… and {} more", list.len() - SECTION_ITEM_CAP);
        }
    }

    let canonical = CanonicalContent {
        template_version: SUMMARY_TEMPLATE_VERSION,
        patient_id: &bundle.patient_id,
        demographics: &demographics,
        lists,
    };
    let content_hash = Fnv1a::new()
        .update(serde_json::to_string(&canonical).expect("canonical content serializes").as_bytes())
        .hex();

    let counts = SnapshotCounts {
        conditions: conditions.len(),
        medications: medications.len(),
        observations: observations.len(),
        procedures: procedures.len(),
        encounters: encounters.len(),
    };
    PatientSnapshot {
        patient_id: bundle.patient_id.clone(),
        text_summary: text,
        conditions,
        medications,
        observations,
        procedures,
        encounters,
        metadata: SnapshotMetadata {
            generated_at,
            template_version: SUMMARY_TEMPLATE_VERSION.to_string(),
            counts,
            content_hash,
        },
    }
}

/// A snapshot qualifies for planning when at least one structured list is non-empty.
pub fn is_eligible(snapshot: &PatientSnapshot) -> bool {
    snapshot.sections().iter().any(|(_, list)| !list.is_empty())
}
