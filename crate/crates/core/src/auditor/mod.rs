//! Deterministic, observational plan auditing: coverage, calibration,
//! action-type drift, verdicts and triage lanes. The auditor never modifies
//! a plan.

mod calibration;
mod coverage;
mod drift;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use calibration::{
    bin_of, brier, ece, ece_mean_confidence, CalibrationAccumulator, CalibrationRecord, DEFAULT_BIN_COUNT,
};
pub use coverage::{check_coverage, coverage_violation, CoverageReport};
pub use drift::{l1_drift, ActionDistribution, DriftTracker, DEFAULT_DRIFT_THRESHOLD};

use crate::planner::ActionPlan;

pub const DEFAULT_CONF_THRESHOLD: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AuditError {
    #[error("no calibration records")]
    EmptyRecords,
    #[error("bin count must be at least 1")]
    InvalidBinCount,
    #[error("not a probability distribution: {0:?}")]
    InvalidDistribution([f64; 5]),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Lane {
    Green,
    Yellow,
    Red,
}

/// Green on PASS; on FAIL, Red at or above the confidence threshold, else Yellow.
pub fn triage_lane(verdict: Verdict, confidence: f64, conf_threshold: f64) -> Lane {
    match verdict {
        Verdict::Pass => Lane::Green,
        Verdict::Fail if confidence >= conf_threshold => Lane::Red,
        Verdict::Fail => Lane::Yellow,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub episode_id: String,
    pub verdict: Verdict,
    pub violations: Vec<String>,
    pub coverage: CoverageReport,
    pub confidence: f64,
    pub high_conf_error: bool,
    pub drift_l1: f64,
    pub drift_warning: bool,
    pub buffer_flag: bool,
    pub lane: Lane,
}

/// Audits one plan and folds it into the run's calibration and drift state.
pub fn audit(
    plan: &ActionPlan,
    drift: &mut DriftTracker,
    calib: &mut CalibrationAccumulator,
    conf_threshold: f64,
) -> AuditRecord {
    let coverage = check_coverage(plan);
    let verdict = if coverage.coverage_all { Verdict::Pass } else { Verdict::Fail };
    calib.push(CalibrationRecord::new(plan.confidence, coverage.coverage_all));
    let (drift_l1, drift_warning) = drift.observe(&plan.type_counts());
    let high_conf_error = plan.confidence >= conf_threshold && !coverage.coverage_all;
    AuditRecord {
        episode_id: plan.episode_id.clone(),
        verdict,
        violations: coverage.violations(),
        confidence: plan.confidence,
        high_conf_error,
        drift_l1,
        drift_warning,
        buffer_flag: high_conf_error,
        lane: triage_lane(verdict, plan.confidence, conf_threshold),
        coverage,
    }
}
