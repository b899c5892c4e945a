use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::auditor::{DEFAULT_BIN_COUNT, DEFAULT_CONF_THRESHOLD, DEFAULT_DRIFT_THRESHOLD};
use crate::guidelines::DEFAULT_TOP_K;
use crate::planner::PlannerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfigName {
    Baseline,
    ContextCache,
    SelfImprove,
    CacheAndSelfImprove,
    BufferReplay,
}

impl ConfigName {
    pub const ALL: [ConfigName; 5] = [
        ConfigName::Baseline,
        ConfigName::ContextCache,
        ConfigName::SelfImprove,
        ConfigName::CacheAndSelfImprove,
        ConfigName::BufferReplay,
    ];

    /// The four configurations that run over a cohort.
    pub const ABLATION: [ConfigName; 4] =
        [ConfigName::Baseline, ConfigName::ContextCache, ConfigName::SelfImprove, ConfigName::CacheAndSelfImprove];

    pub fn as_str(self) -> &'static str {
        match self {
            ConfigName::Baseline => "baseline",
            ConfigName::ContextCache => "context_cache",
            ConfigName::SelfImprove => "self_improve",
            ConfigName::CacheAndSelfImprove => "cache_and_self_improve",
            ConfigName::BufferReplay => "buffer_replay",
        }
    }

    /// Row label used in report tables.
    pub fn title(self) -> &'static str {
        match self {
            ConfigName::Baseline => "Baseline",
            ConfigName::ContextCache => "Context Cache",
            ConfigName::SelfImprove => "Self Improve",
            ConfigName::CacheAndSelfImprove => "Cache + Self Imp.",
            ConfigName::BufferReplay => "Buffer Replay",
        }
    }

    /// `(enable_cache, enable_self_improve)` implied by the name.
    pub fn flags(self) -> (bool, bool) {
        match self {
            ConfigName::Baseline => (false, false),
            ConfigName::ContextCache => (true, false),
            ConfigName::SelfImprove => (false, true),
            ConfigName::CacheAndSelfImprove | ConfigName::BufferReplay => (true, true),
        }
    }
}

impl fmt::Display for ConfigName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConfigName {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s.trim())
            .ok_or_else(|| HarnessError::InvalidConfig(format!("unknown configuration name: {s:?}")))
    }
}

fn default_patient_limit() -> usize {
    50
}
fn default_conf_threshold() -> f64 {
    DEFAULT_CONF_THRESHOLD
}
fn default_drift_threshold() -> f64 {
    DEFAULT_DRIFT_THRESHOLD
}
fn default_bin_count() -> usize {
    DEFAULT_BIN_COUNT
}
fn default_one_usize() -> usize {
    1
}
fn default_one_u32() -> u32 {
    1
}
fn default_top_k() -> usize {
    DEFAULT_TOP_K
}
fn default_confidence() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub name: ConfigName,
    pub enable_cache: bool,
    pub enable_self_improve: bool,
    #[serde(default = "default_patient_limit")]
    pub patient_limit: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_conf_threshold")]
    pub conf_threshold: f64,
    #[serde(default = "default_drift_threshold")]
    pub drift_threshold: f64,
    #[serde(default = "default_bin_count")]
    pub bin_count: usize,
    #[serde(default = "default_one_usize")]
    pub worker_count: usize,
    #[serde(default = "default_one_u32")]
    pub max_refine_iterations: u32,
    #[serde(default = "default_top_k")]
    pub retrieval_k: usize,
    #[serde(default = "default_confidence")]
    pub confidence_default: f64,
}

impl RunConfig {
    pub fn new(name: ConfigName) -> Self {
        let (enable_cache, enable_self_improve) = name.flags();
        Self {
            name,
            enable_cache,
            enable_self_improve,
            patient_limit: default_patient_limit(),
            seed: 0,
            conf_threshold: DEFAULT_CONF_THRESHOLD,
            drift_threshold: DEFAULT_DRIFT_THRESHOLD,
            bin_count: DEFAULT_BIN_COUNT,
            worker_count: 1,
            max_refine_iterations: 1,
            retrieval_k: DEFAULT_TOP_K,
            confidence_default: 0.5,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_patient_limit(mut self, limit: usize) -> Self {
        self.patient_limit = limit;
        self
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::InvalidConfig(m));
        if (self.enable_cache, self.enable_self_improve) != self.name.flags() {
            return bad(format!(
                "{} requires enable_cache={} and enable_self_improve={}",
                self.name,
                self.name.flags().0,
                self.name.flags().1
            ));
        }
        if self.bin_count == 0 {
            return bad("bin_count must be at least 1".into());
        }
        if self.worker_count == 0 {
            return bad("worker_count must be at least 1".into());
        }
        if self.patient_limit == 0 {
            return bad("patient_limit must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.conf_threshold) || !(0.0..=1.0).contains(&self.confidence_default) {
            return bad("confidence values must lie in [0, 1]".into());
        }
        Ok(())
    }

    pub fn planner_config(&self) -> PlannerConfig {
        PlannerConfig {
            enable_self_improve: self.enable_self_improve,
            enable_cache: self.enable_cache,
            max_refine_iterations: self.max_refine_iterations,
            confidence_default: self.confidence_default,
            retrieval_k: self.retrieval_k,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_fix_flags() {
        assert!(!RunConfig::new(ConfigName::Baseline).planner_config().enable_cache);
        let c = RunConfig::new(ConfigName::ContextCache);
        assert!(c.enable_cache && !c.enable_self_improve);
        let c = RunConfig::new(ConfigName::SelfImprove);
        assert!(!c.enable_cache && c.enable_self_improve);
        let c = RunConfig::new(ConfigName::BufferReplay);
        assert!(c.enable_cache && c.enable_self_improve);
        for n in ConfigName::ALL {
            assert_eq!(n.as_str().parse::<ConfigName>().unwrap(), n);
            RunConfig::new(n).validate().unwrap();
        }
        assert!("turbo".parse::<ConfigName>().is_err());
    }

    #[test]
    fn mismatched_flags_rejected() {
        let mut c = RunConfig::new(ConfigName::Baseline);
        c.enable_cache = true;
        assert!(c.validate().is_err());
    }

    #[test]
    fn json_defaults() {
        let c: RunConfig =
            serde_json::from_str(r#"{"name":"self_improve","enable_cache":false,"enable_self_improve":true}"#).unwrap();
        assert_eq!(c, RunConfig::new(ConfigName::SelfImprove));
    }
}
