use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::json;

/// Canonical action categories. The first four are mandatory for coverage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionType {
    FollowUp,
    MedicationReconciliation,
    PatientEducation,
    SymptomMonitoring,
    Other,
}

impl ActionType {
    pub const ALL: [ActionType; 5] = [
        ActionType::FollowUp,
        ActionType::MedicationReconciliation,
        ActionType::PatientEducation,
        ActionType::SymptomMonitoring,
        ActionType::Other,
    ];

    pub const MANDATORY: [ActionType; 4] = [
        ActionType::FollowUp,
        ActionType::MedicationReconciliation,
        ActionType::PatientEducation,
        ActionType::SymptomMonitoring,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ActionType::FollowUp => "follow_up",
            ActionType::MedicationReconciliation => "medication_reconciliation",
            ActionType::PatientEducation => "patient_education",
            ActionType::SymptomMonitoring => "symptom_monitoring",
            ActionType::Other => "other",
        }
    }

    /// Human-facing category name used in violation messages.
    pub fn title(self) -> &'static str {
        match self {
            ActionType::FollowUp => "Follow-up Appointments",
            ActionType::MedicationReconciliation => "Medication Reconciliation",
            ActionType::PatientEducation => "Patient Education",
            ActionType::SymptomMonitoring => "Symptom Monitoring",
            ActionType::Other => "Other",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_mandatory(self) -> bool {
        self != ActionType::Other
    }
}

impl fmt::Display for ActionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

const SYNONYMS: &[(&str, ActionType)] = &[
    ("followup", ActionType::FollowUp),
    ("followups", ActionType::FollowUp),
    ("followupappointment", ActionType::FollowUp),
    ("followupappointments", ActionType::FollowUp),
    ("followupvisit", ActionType::FollowUp),
    ("followupcare", ActionType::FollowUp),
    ("appointment", ActionType::FollowUp),
    ("appointments", ActionType::FollowUp),
    ("scheduling", ActionType::FollowUp),
    ("medicationreconciliation", ActionType::MedicationReconciliation),
    ("medreconciliation", ActionType::MedicationReconciliation),
    ("medication", ActionType::MedicationReconciliation),
    ("medications", ActionType::MedicationReconciliation),
    ("meds", ActionType::MedicationReconciliation),
    ("medsreview", ActionType::MedicationReconciliation),
    ("medicationreview", ActionType::MedicationReconciliation),
    ("medicationmanagement", ActionType::MedicationReconciliation),
    ("education", ActionType::PatientEducation),
    ("patienteducation", ActionType::PatientEducation),
    ("patientteaching", ActionType::PatientEducation),
    ("teaching", ActionType::PatientEducation),
    ("monitoring", ActionType::SymptomMonitoring),
    ("symptommonitoring", ActionType::SymptomMonitoring),
    ("symptoms", ActionType::SymptomMonitoring),
    ("warningsigns", ActionType::SymptomMonitoring),
    ("redflags", ActionType::SymptomMonitoring),
    ("other", ActionType::Other),
];

fn normalize_label(label: &str) -> String {
    label.chars().filter(|c| c.is_alphanumeric()).flat_map(char::to_lowercase).collect()
}

/// Maps a backend's free-form category label onto an [`ActionType`].
pub fn canonicalize_action_type(label: &str) -> ActionType {
    let key = normalize_label(label);
    SYNONYMS.iter().find(|(k, _)| *k == key).map(|(_, t)| *t).unwrap_or(ActionType::Other)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionItem {
    pub action_type: ActionType,
    pub raw_type_label: String,
    pub details: String,
    pub deadline_hours: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionPlan {
    pub actions: Vec<ActionItem>,
    pub confidence: f64,
    pub draft_index: u32,
    pub backend_id: String,
    pub episode_id: String,
}

impl ActionPlan {
    /// The plan in the JSON shape backends are asked to produce.
    pub fn to_wire_json(&self) -> String {
        let actions: Vec<_> = self
            .actions
            .iter()
            .map(|a| json!({"type": a.raw_type_label, "details": a.details, "deadline_hours": a.deadline_hours}))
            .collect();
        json!({"actions": actions, "confidence": self.confidence}).to_string()
    }

    /// Counts per action type, indexed by [`ActionType::index`].
    pub fn type_counts(&self) -> [u64; 5] {
        let mut counts = [0; 5];
        for a in &self.actions {
            counts[a.action_type.index()] += 1;
        }
        counts
    }
}
