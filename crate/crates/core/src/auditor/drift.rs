use serde::{Deserialize, Serialize};

use super::AuditError;
use crate::planner::ActionType;

pub const DEFAULT_DRIFT_THRESHOLD: f64 = 0.4;
const SUM_TOLERANCE: f64 = 1e-9;

/// Probability distribution over the five action types, indexed by [`ActionType::index`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionDistribution([f64; 5]);

impl ActionDistribution {
    pub fn new(weights: [f64; 5]) -> Result<Self, AuditError> {
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(AuditError::InvalidDistribution(weights));
        }
        Ok(Self(weights))
    }

    /// Normalized counts; `None` when every count is zero.
    pub fn from_counts(counts: &[u64; 5]) -> Option<Self> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return None;
        }
        Some(Self(counts.map(|c| c as f64 / total as f64)))
    }

    pub fn get(&self, t: ActionType) -> f64 {
        self.0[t.index()]
    }

    pub fn weights(&self) -> [f64; 5] {
        self.0
    }
}

/// Sum of absolute differences; lies in `[0, 2]`.
pub fn l1_drift(current: &ActionDistribution, reference: &ActionDistribution) -> f64 {
    current.0.iter().zip(&reference.0).map(|(a, b)| (a - b).abs()).sum()
}

/// Action-type distribution of every previously audited episode in a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftTracker {
    counts: [u64; 5],
    warn_threshold: f64,
    per_episode: Vec<f64>,
}

impl Default for DriftTracker {
    fn default() -> Self {
        Self::new(DEFAULT_DRIFT_THRESHOLD)
    }
}

impl DriftTracker {
    pub fn new(warn_threshold: f64) -> Self {
        Self { counts: [0; 5], warn_threshold, per_episode: Vec::new() }
    }

    pub fn warn_threshold(&self) -> f64 {
        self.warn_threshold
    }

    pub fn counts(&self) -> &[u64; 5] {
        &self.counts
    }

    pub fn per_episode(&self) -> &[f64] {
        &self.per_episode
    }

    /// Drift of one episode against the cumulative reference built so far,
    /// without updating the tracker. Zero when either side has no actions.
    pub fn measure(&self, episode_counts: &[u64; 5]) -> f64 {
        match (
            ActionDistribution::from_counts(episode_counts),
            ActionDistribution::from_counts(&self.counts),
        ) {
            (Some(cur), Some(reference)) => l1_drift(&cur, &reference),
            _ => 0.0,
        }
    }

    /// Measures then folds the episode into the reference. Returns `(drift, warning)`.
    pub fn observe(&mut self, episode_counts: &[u64; 5]) -> (f64, bool) {
        let drift = self.measure(episode_counts);
        for (total, c) in self.counts.iter_mut().zip(episode_counts) {
            *total += c;
        }
        self.per_episode.push(drift);
        (drift, self.is_warning(drift))
    }

    /// Strictly above the threshold.
    pub fn is_warning(&self, drift: f64) -> bool {
        drift > self.warn_threshold
    }

    pub fn mean(&self) -> f64 {
        if self.per_episode.is_empty() {
            0.0
        } else {
            self.per_episode.iter().sum::<f64>() / self.per_episode.len() as f64
        }
    }
}
