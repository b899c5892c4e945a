//! Plan generation: prompt context construction, backend invocation, plan
//! parsing and the within-episode refinement loop.

mod action;
mod backend;
mod context;
mod http;
mod parse;
mod scripted;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use action::{canonicalize_action_type, ActionItem, ActionPlan, ActionType};
pub use backend::{BackendError, PlannerBackend};
pub use context::{
    build_context, context_cache_key, ContextBuild, ContextCache, PromptContext, PROMPT_TEMPLATE_VERSION,
    SYSTEM_PROMPT,
};
pub use http::{backend_configured, completion_text, HttpBackend, HttpBackendConfig, ENV_API_KEY, ENV_ENDPOINT, ENV_MODEL};
pub use parse::{extract_json_object, parse_plan, ParseNotes, PlanParseError};
pub use scripted::{ConfidenceSpec, InclusionProbs, ScriptedBackend, ScriptedPolicy};

use crate::auditor::{check_coverage, CoverageReport};
use crate::clock::{millis, Clock};
use crate::guidelines::{RetrievalIndex, DEFAULT_TOP_K};
use crate::snapshot::PatientSnapshot;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub enable_self_improve: bool,
    pub enable_cache: bool,
    pub max_refine_iterations: u32,
    pub confidence_default: f64,
    pub retrieval_k: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            enable_self_improve: false,
            enable_cache: false,
            max_refine_iterations: 1,
            confidence_default: 0.5,
            retrieval_k: DEFAULT_TOP_K,
        }
    }
}

impl PlannerConfig {
    /// Regenerations allowed in one episode.
    pub fn refinement_budget(&self) -> u32 {
        if self.enable_self_improve {
            self.max_refine_iterations
        } else {
            0
        }
    }
}

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Parse(#[from] PlanParseError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageVector {
    pub follow_up: bool,
    pub meds: bool,
    pub education: bool,
    pub monitoring: bool,
}

impl From<&CoverageReport> for CoverageVector {
    fn from(c: &CoverageReport) -> Self {
        Self {
            follow_up: c.has_follow_up,
            meds: c.has_meds,
            education: c.has_education,
            monitoring: c.has_monitoring,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DraftRecord {
    pub draft_index: u32,
    /// `None` when the draft could not be parsed.
    pub coverage: Option<CoverageVector>,
    pub confidence_imputed: bool,
    pub dropped_actions: usize,
    pub elapsed_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTelemetry {
    pub cache_hit: bool,
    pub retrieval_performed: bool,
    pub context_build_ms: f64,
    pub prompt_template_version: String,
    pub drafts: Vec<DraftRecord>,
    pub refine_iterations: u32,
}

/// Categories to repair, supplied from outside the episode (buffer replay).
#[derive(Debug, Clone, PartialEq)]
pub struct RefinementHint {
    pub prior_draft: Option<String>,
    pub missing: Vec<ActionType>,
}

#[derive(Debug, Clone)]
pub struct PlannedEpisode {
    pub plan: ActionPlan,
    pub telemetry: EpisodeTelemetry,
}

/// Everything needed to plan episodes, shared across a run.
#[derive(Clone)]
pub struct Planner {
    pub backend: Arc<dyn PlannerBackend>,
    pub index: Arc<RetrievalIndex>,
    pub cache: Arc<ContextCache>,
    pub clock: Arc<dyn Clock>,
}

struct Draft {
    plan: ActionPlan,
    coverage: CoverageReport,
}

impl Draft {
    fn covered(&self) -> usize {
        4 - self.coverage.missing.len()
    }

    fn covers_all_of(&self, other: &CoverageReport) -> bool {
        other.covered().all(|t| !self.coverage.missing.contains(&t))
    }
}

impl Planner {
    pub fn plan_episode(
        &self,
        snapshot: &PatientSnapshot,
        episode_id: &str,
        cfg: &PlannerConfig,
    ) -> Result<PlannedEpisode, PlannerError> {
        self.plan_with_hint(snapshot, episode_id, cfg, None)
    }

    /// Generates draft 0 and, when self-improvement is on, regenerates while
    /// mandatory categories are missing.
    ///
    /// The returned draft covers every category draft 0 covered; among such
    /// drafts the one with most categories wins, later drafts breaking ties.
    pub fn plan_with_hint(
        &self,
        snapshot: &PatientSnapshot,
        episode_id: &str,
        cfg: &PlannerConfig,
        hint: Option<RefinementHint>,
    ) -> Result<PlannedEpisode, PlannerError> {
        let t0 = self.clock.elapsed();
        let build = build_context(snapshot, &self.index, &self.cache, cfg.enable_cache, cfg.retrieval_k);
        let mut telemetry = EpisodeTelemetry {
            cache_hit: build.cache_hit,
            retrieval_performed: build.retrieval_performed,
            context_build_ms: millis(self.clock.elapsed() - t0),
            prompt_template_version: PROMPT_TEMPLATE_VERSION.to_string(),
            drafts: Vec::new(),
            refine_iterations: 0,
        };
        let base = build.context;

        let first_ctx = match hint {
            Some(h) => base.with_refinement(h.prior_draft, h.missing),
            None => (*base).clone(),
        };
        let (draft0, parse_err) = self.draft(&first_ctx, 0, episode_id, cfg, &mut telemetry)?;
        let floor = draft0.as_ref().map(|d| d.coverage.clone());
        let mut best = draft0;
        let mut last_err = parse_err;

        for i in 1..=cfg.refinement_budget() {
            if best.as_ref().is_some_and(|d| d.coverage.coverage_all) {
                break;
            }
            let (prior, missing) = match &best {
                Some(d) => (Some(d.plan.to_wire_json()), d.coverage.missing.clone()),
                None => (None, ActionType::MANDATORY.to_vec()),
            };
            let ctx = base.with_refinement(prior, missing);
            telemetry.refine_iterations += 1;
            let (candidate, err) = match self.draft(&ctx, i, episode_id, cfg, &mut telemetry) {
                Ok(r) => r,
                // A failed regeneration ends refinement; earlier drafts still stand.
                Err(_) if best.is_some() => break,
                Err(e) => return Err(e),
            };
            if err.is_some() {
                last_err = err;
            }
            let Some(candidate) = candidate else { continue };
            if floor.as_ref().is_some_and(|f| !candidate.covers_all_of(f)) {
                continue;
            }
            if best.as_ref().is_none_or(|b| candidate.covered() >= b.covered()) {
                best = Some(candidate);
            }
        }

        match best {
            Some(d) => Ok(PlannedEpisode { plan: d.plan, telemetry }),
            None => Err(PlannerError::Parse(last_err.unwrap_or(PlanParseError::NoJsonObject))),
        }
    }

    /// One backend call. Backend failures are errors; parse failures are
    /// returned alongside `None` so refinement can continue.
    fn draft(
        &self,
        ctx: &PromptContext,
        index: u32,
        episode_id: &str,
        cfg: &PlannerConfig,
        telemetry: &mut EpisodeTelemetry,
    ) -> Result<(Option<Draft>, Option<PlanParseError>), PlannerError> {
        let start = self.clock.elapsed();
        let generated = self.backend.generate(ctx);
        let elapsed_ms = millis(self.clock.elapsed() - start);
        let mut record = DraftRecord {
            draft_index: index,
            coverage: None,
            confidence_imputed: false,
            dropped_actions: 0,
            elapsed_ms,
            error: None,
        };
        let raw = match generated {
            Ok(raw) => raw,
            Err(e) => {
                record.error = Some(e.to_string());
                telemetry.drafts.push(record);
                return Err(e.into());
            }
        };
        match parse_plan(&raw, episode_id, self.backend.backend_id(), cfg.confidence_default) {
            Ok((mut plan, notes)) => {
                plan.draft_index = index;
                let coverage = check_coverage(&plan);
                record.coverage = Some(CoverageVector::from(&coverage));
                record.confidence_imputed = notes.confidence_imputed;
                record.dropped_actions = notes.dropped_actions;
                telemetry.drafts.push(record);
                Ok((Some(Draft { plan, coverage }), None))
            }
            Err(e) => {
                record.error = Some(e.to_string());
                telemetry.drafts.push(record);
                Ok((None, Some(e)))
            }
        }
    }
}
