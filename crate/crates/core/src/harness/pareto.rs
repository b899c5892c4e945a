use serde::{Deserialize, Serialize};

use super::summary::RunSummary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub config_name: String,
    pub coverage_all_rate: f64,
    pub mean_latency_s: f64,
    pub dominated: bool,
}

impl ParetoPoint {
    pub fn new(config_name: impl Into<String>, coverage_all_rate: f64, mean_latency_s: f64) -> Self {
        Self { config_name: config_name.into(), coverage_all_rate, mean_latency_s, dominated: false }
    }

    pub fn from_summary(s: &RunSummary) -> Self {
        Self::new(s.config_name.as_str(), s.coverage_all_rate, s.mean_latency_s)
    }

    /// At least as good on both axes and strictly better on one.
    pub fn dominates(&self, other: &ParetoPoint) -> bool {
        self.coverage_all_rate >= other.coverage_all_rate
            && self.mean_latency_s <= other.mean_latency_s
            && (self.coverage_all_rate > other.coverage_all_rate || self.mean_latency_s < other.mean_latency_s)
    }
}

/// Every point with its `dominated` flag set, in input order.
pub fn mark_dominated(points: &[ParetoPoint]) -> Vec<ParetoPoint> {
    points
        .iter()
        .map(|p| ParetoPoint { dominated: points.iter().any(|q| q.dominates(p)), ..p.clone() })
        .collect()
}

/// Non-dominated points sorted by latency ascending (name breaks ties).
pub fn pareto_frontier(points: &[ParetoPoint]) -> Vec<ParetoPoint> {
    let mut front: Vec<ParetoPoint> = mark_dominated(points).into_iter().filter(|p| !p.dominated).collect();
    front.sort_by(|a, b| {
        a.mean_latency_s.total_cmp(&b.mean_latency_s).then_with(|| a.config_name.cmp(&b.config_name))
    });
    front
}
