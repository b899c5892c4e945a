use std::fmt;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::IngestError;

/// The FHIR R4 resource kinds this crate understands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ResourceKind {
    Patient,
    Encounter,
    Condition,
    MedicationRequest,
    Observation,
    Procedure,
}

impl ResourceKind {
    pub const ALL: [ResourceKind; 6] = [
        ResourceKind::Patient,
        ResourceKind::Encounter,
        ResourceKind::Condition,
        ResourceKind::MedicationRequest,
        ResourceKind::Observation,
        ResourceKind::Procedure,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ResourceKind::Patient => "Patient",
            ResourceKind::Encounter => "Encounter",
            ResourceKind::Condition => "Condition",
            ResourceKind::MedicationRequest => "MedicationRequest",
            ResourceKind::Observation => "Observation",
            ResourceKind::Procedure => "Procedure",
        }
    }

    pub fn from_resource_type(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for ResourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One parsed resource from the supported subset.
///
/// Only the fields the summarizer needs are extracted; the original JSON text
/// is kept verbatim in `raw` for provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FhirResource {
    pub kind: ResourceKind,
    pub id: String,
    /// Normalized `Patient/<id>` reference. For a Patient resource this is its own id.
    pub patient_ref: Option<String>,
    pub status: String,
    pub display: String,
    pub timestamp: Option<DateTime<Utc>>,
    pub raw: String,
}

pub const UNKNOWN: &str = "unknown";

impl FhirResource {
    /// Patient id taken from the normalized reference.
    pub fn patient_id(&self) -> Option<&str> {
        self.patient_ref.as_deref().and_then(|r| r.strip_prefix("Patient/"))
    }

    pub(crate) fn sort_key(&self) -> (Option<DateTime<Utc>>, &str) {
        (self.timestamp, self.id.as_str())
    }
}

pub fn parse_resource(raw: &str) -> Result<FhirResource, IngestError> {
    let value: Value = serde_json::from_str(raw)
        .map_err(|e| IngestError::MalformedResource(format!("invalid JSON: {e}")))?;
    from_value(&value, raw.to_string())
}

/// Builds a resource from an already parsed JSON value; `raw` is stored as given.
pub(crate) fn from_value(value: &Value, raw: String) -> Result<FhirResource, IngestError> {
    let obj = value
        .as_object()
        .ok_or_else(|| IngestError::MalformedResource("not a JSON object".into()))?;
    let resource_type = obj
        .get("resourceType")
        .and_then(Value::as_str)
        .ok_or_else(|| IngestError::MalformedResource("missing resourceType".into()))?;
    let kind = ResourceKind::from_resource_type(resource_type)
        .ok_or_else(|| IngestError::UnsupportedResourceType(resource_type.to_string()))?;
    let id = obj
        .get("id")
        .and_then(Value::as_str)
        .filter(|s| !s.trim().is_empty())
        .ok_or_else(|| IngestError::MalformedResource(format!("{kind} without id")))?
        .to_string();

    let patient_ref = match kind {
        ResourceKind::Patient => Some(format!("Patient/{id}")),
        _ => ["subject", "patient"]
            .iter()
            .filter_map(|k| value.pointer(&format!("/{k}/reference")).and_then(Value::as_str))
            .find_map(normalize_patient_ref),
    };

    Ok(FhirResource {
        kind,
        patient_ref,
        status: extract_status(value),
        display: extract_display(value),
        timestamp: extract_timestamp(value),
        id,
        raw,
    })
}

/// Reduces `Patient/123`, `http://host/fhir/Patient/123/_history/2` and the like to `Patient/123`.
pub fn normalize_patient_ref(reference: &str) -> Option<String> {
    let (_, tail) = reference.rsplit_once("Patient/")?;
    let id = tail.split('/').next().unwrap_or_default();
    if id.is_empty() {
        None
    } else {
        Some(format!("Patient/{id}"))
    }
}

fn str_at<'a>(value: &'a Value, pointer: &str) -> Option<&'a str> {
    value
        .pointer(pointer)
        .and_then(Value::as_str)
        .map(str::trim)
        .filter(|s| !s.is_empty())
}

fn extract_status(value: &Value) -> String {
    str_at(value, "/clinicalStatus/coding/0/code")
        .or_else(|| str_at(value, "/status"))
        .unwrap_or(UNKNOWN)
        .to_string()
}

const DISPLAY_POINTERS: &[&str] = &[
    "/code/text",
    "/code/coding/0/display",
    "/medicationCodeableConcept/text",
    "/medicationCodeableConcept/coding/0/display",
    "/type/0/text",
    "/type/0/coding/0/display",
];

fn extract_display(value: &Value) -> String {
    DISPLAY_POINTERS
        .iter()
        .find_map(|p| str_at(value, p))
        .unwrap_or(UNKNOWN)
        .to_string()
}

const TIMESTAMP_POINTERS: &[&str] = &[
    "/effectiveDateTime",
    "/authoredOn",
    "/period/start",
    "/recordedDate",
    "/performedDateTime",
    "/performedPeriod/start",
    "/effectivePeriod/start",
    "/onsetDateTime",
];

fn extract_timestamp(value: &Value) -> Option<DateTime<Utc>> {
    TIMESTAMP_POINTERS
        .iter()
        .find_map(|p| str_at(value, p))
        .and_then(parse_fhir_datetime)
}

/// Parses the FHIR `dateTime` forms: `YYYY`, `YYYY-MM`, `YYYY-MM-DD` and full RFC 3339.
/// Partial dates resolve to the start of the period in UTC.
pub fn parse_fhir_datetime(s: &str) -> Option<DateTime<Utc>> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.with_timezone(&Utc));
    }
    let date = match s.len() {
        4 => NaiveDate::from_ymd_opt(s.parse().ok()?, 1, 1),
        7 => NaiveDate::parse_from_str(&format!("{s}-01"), "%Y-%m-%d").ok(),
        10 => NaiveDate::parse_from_str(s, "%Y-%m-%d").ok(),
        _ => None,
    }?;
    Some(date.and_hms_opt(0, 0, 0)?.and_utc())
}
