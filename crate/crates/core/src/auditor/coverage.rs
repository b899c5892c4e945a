use serde::{Deserialize, Serialize};

use crate::planner::{ActionPlan, ActionType};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub has_follow_up: bool,
    pub has_meds: bool,
    pub has_education: bool,
    pub has_monitoring: bool,
    /// Conjunction of the four flags (the coverage gate).
    pub coverage_all: bool,
    /// Absent mandatory categories in canonical order.
    pub missing: Vec<ActionType>,
}

impl CoverageReport {
    pub fn has(&self, t: ActionType) -> bool {
        match t {
            ActionType::FollowUp => self.has_follow_up,
            ActionType::MedicationReconciliation => self.has_meds,
            ActionType::PatientEducation => self.has_education,
            ActionType::SymptomMonitoring => self.has_monitoring,
            ActionType::Other => false,
        }
    }

    pub fn covered(&self) -> impl Iterator<Item = ActionType> + '_ {
        ActionType::MANDATORY.into_iter().filter(|t| self.has(*t))
    }

    /// One "Plan is missing <Category>" message per absent category.
    pub fn violations(&self) -> Vec<String> {
        self.missing.iter().map(|t| coverage_violation(*t)).collect()
    }
}

pub fn coverage_violation(t: ActionType) -> String {
    format!("Plan is missing {}", t.title())
}

pub fn check_coverage(plan: &ActionPlan) -> CoverageReport {
    let has = |t: ActionType| plan.actions.iter().any(|a| a.action_type == t);
    let missing: Vec<ActionType> = ActionType::MANDATORY.into_iter().filter(|t| !has(*t)).collect();
    CoverageReport {
        has_follow_up: has(ActionType::FollowUp),
        has_meds: has(ActionType::MedicationReconciliation),
        has_education: has(ActionType::PatientEducation),
        has_monitoring: has(ActionType::SymptomMonitoring),
        coverage_all: missing.is_empty(),
        missing,
    }
}
