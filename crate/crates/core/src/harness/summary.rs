use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::config::ConfigName;
use super::episode::EpisodeResult;
use super::HarnessError;
use crate::auditor::{brier, ece, ece_mean_confidence, CalibrationRecord, Verdict};

/// Per-configuration aggregate. Rates are fractions of the N non-skipped
/// episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_name: ConfigName,
    pub n: usize,
    pub skipped: usize,
    pub coverage_all_rate: f64,
    pub follow_up_rate: f64,
    pub meds_rate: f64,
    pub education_rate: f64,
    pub monitoring_rate: f64,
    pub brier: f64,
    pub ece: f64,
    pub ece_meanconf: f64,
    pub pass_count: usize,
    pub fail_count: usize,
    pub fail_rate: f64,
    pub violation_counts: BTreeMap<String, usize>,
    pub high_conf_error_count: usize,
    pub high_conf_error_rate: f64,
    pub mean_drift_l1: f64,
    pub drift_warning_count: usize,
    pub avg_confidence: f64,
    pub mean_latency_s: f64,
    pub episodes_per_min: f64,
    pub mean_refine_iterations: f64,
}

/// Folds episode results into a summary. `elapsed` is the wall (or virtual)
/// duration of the whole run.
pub fn aggregate(
    config_name: ConfigName,
    results: &[EpisodeResult],
    bin_count: usize,
    elapsed: Duration,
) -> Result<RunSummary, HarnessError> {
    let done: Vec<&EpisodeResult> = results.iter().filter(|r| !r.skipped).collect();
    let n = done.len();
    if n == 0 {
        return Err(HarnessError::NoEpisodes);
    }
    let audits: Vec<_> = done.iter().filter_map(|r| r.audit.as_ref()).collect();
    if audits.len() != n {
        return Err(HarnessError::InvalidConfig("non-skipped episode without an audit".into()));
    }
    let nf = n as f64;
    let rate = |f: &dyn Fn(&crate::auditor::AuditRecord) -> bool| audits.iter().filter(|a| f(a)).count() as f64 / nf;

    let records: Vec<CalibrationRecord> =
        audits.iter().map(|a| CalibrationRecord::new(a.confidence, a.coverage.coverage_all)).collect();
    let brier = brier(&records).map_err(HarnessError::Audit)?;
    let ece_v = ece(&records, bin_count).map_err(HarnessError::Audit)?;
    let ece_mc = ece_mean_confidence(&records, bin_count).map_err(HarnessError::Audit)?;

    let mut violation_counts = BTreeMap::new();
    for a in &audits {
        if !a.violations.is_empty() {
            *violation_counts.entry("coverage".to_string()).or_insert(0) += 1;
        }
    }
    let pass_count = audits.iter().filter(|a| a.verdict == Verdict::Pass).count();
    let high_conf_error_count = audits.iter().filter(|a| a.high_conf_error).count();
    let minutes = elapsed.as_secs_f64() / 60.0;

    Ok(RunSummary {
        config_name,
        n,
        skipped: results.len() - n,
        coverage_all_rate: rate(&|a| a.coverage.coverage_all),
        follow_up_rate: rate(&|a| a.coverage.has_follow_up),
        meds_rate: rate(&|a| a.coverage.has_meds),
        education_rate: rate(&|a| a.coverage.has_education),
        monitoring_rate: rate(&|a| a.coverage.has_monitoring),
        brier,
        ece: ece_v,
        ece_meanconf: ece_mc,
        pass_count,
        fail_count: n - pass_count,
        fail_rate: (n - pass_count) as f64 / nf,
        violation_counts,
        high_conf_error_count,
        high_conf_error_rate: high_conf_error_count as f64 / nf,
        mean_drift_l1: audits.iter().map(|a| a.drift_l1).sum::<f64>() / nf,
        drift_warning_count: audits.iter().filter(|a| a.drift_warning).count(),
        avg_confidence: audits.iter().map(|a| a.confidence).sum::<f64>() / nf,
        mean_latency_s: done.iter().map(|r| r.latency_ms).sum::<f64>() / nf / 1000.0,
        episodes_per_min: if minutes > 0.0 { nf / minutes } else { 0.0 },
        mean_refine_iterations: done.iter().map(|r| r.refine_iterations as f64).sum::<f64>() / nf,
    })
}
