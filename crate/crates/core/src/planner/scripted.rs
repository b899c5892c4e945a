//! Seeded stand-in for an LLM planner.
//!
//! Output depends only on (seed, policy, prompt context). Draft 0 includes each
//! mandatory category independently with its inclusion probability. When the
//! context carries a prior draft, the prior actions are kept and each missing
//! category is added with the repair probability.

use std::sync::Arc;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::action::ActionType;
use super::backend::{BackendError, PlannerBackend};
use super::context::PromptContext;
use super::parse::parse_plan;
use crate::clock::VirtualClock;
use crate::hash::Fnv1a;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InclusionProbs {
    pub follow_up: f64,
    pub meds: f64,
    pub education: f64,
    pub monitoring: f64,
}

impl InclusionProbs {
    pub fn get(&self, t: ActionType) -> f64 {
        match t {
            ActionType::FollowUp => self.follow_up,
            ActionType::MedicationReconciliation => self.meds,
            ActionType::PatientEducation => self.education,
            ActionType::SymptomMonitoring => self.monitoring,
            ActionType::Other => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceSpec {
    pub mean: f64,
    /// Half-width of the uniform draw around `mean`.
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedPolicy {
    pub include_prob: InclusionProbs,
    pub repair_prob: f64,
    pub confidence: ConfidenceSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<u64>,
}

impl Default for ScriptedPolicy {
    fn default() -> Self {
        Self {
            include_prob: InclusionProbs { follow_up: 1.0, meds: 0.8, education: 0.54, monitoring: 0.54 },
            repair_prob: 0.9,
            confidence: ConfidenceSpec { mean: 0.88, spread: 0.07 },
            latency_ms: None,
        }
    }
}

impl ScriptedPolicy {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

fn label(t: ActionType) -> &'static str {
    match t {
        ActionType::FollowUp => "Follow-up Appointment",
        ActionType::MedicationReconciliation => "Medication Reconciliation",
        ActionType::PatientEducation => "Patient Education",
        ActionType::SymptomMonitoring => "Symptom Monitoring",
        ActionType::Other => "Other",
    }
}

fn details(t: ActionType) -> (&'static str, f64) {
    match t {
        ActionType::FollowUp => ("Schedule a primary care follow-up visit after discharge", 168.0),
        ActionType::MedicationReconciliation => ("Reconcile the discharge medication list against home medications", 24.0),
        ActionType::PatientEducation => ("Teach back diagnosis, diet and medication changes with the patient", 24.0),
        ActionType::SymptomMonitoring => ("Review warning signs that require calling the care team", 72.0),
        ActionType::Other => ("Additional instruction", 0.0),
    }
}

#[derive(Debug)]
pub struct ScriptedBackend {
    id: String,
    policy: ScriptedPolicy,
    seed: u64,
    clock: Option<Arc<VirtualClock>>,
}

impl ScriptedBackend {
    pub fn new(policy: ScriptedPolicy, seed: u64) -> Self {
        Self { id: "scripted".into(), policy, seed, clock: None }
    }

    /// Simulated latency advances `clock` instead of sleeping.
    pub fn with_virtual_clock(mut self, clock: Arc<VirtualClock>) -> Self {
        self.clock = Some(clock);
        self
    }

    pub fn policy(&self) -> &ScriptedPolicy {
        &self.policy
    }

    fn rng_for(&self, context: &PromptContext) -> ChaCha8Rng {
        let seed = Fnv1a::new()
            .field(&self.seed.to_le_bytes())
            .field(&context.content_digest().to_le_bytes())
            .finish();
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Produces plan JSON text for `context`.
    pub fn render(&self, context: &PromptContext) -> String {
        let mut rng = self.rng_for(context);
        let prior = context
            .prior_draft
            .as_deref()
            .and_then(|raw| parse_plan(raw, "", "", 0.5).ok())
            .map(|(plan, _)| plan);

        let mut actions: Vec<Value> = Vec::new();
        match &prior {
            Some(prior) => {
                let present: Vec<ActionType> = prior.actions.iter().map(|a| a.action_type).collect();
                let missing: Vec<ActionType> = match &context.missing_categories {
                    Some(m) => m.clone(),
                    None => ActionType::MANDATORY.into_iter().filter(|t| !present.contains(t)).collect(),
                };
                for a in &prior.actions {
                    actions.push(json!({"type": a.raw_type_label, "details": a.details, "deadline_hours": a.deadline_hours}));
                }
                for t in ActionType::MANDATORY {
                    // Draw for every category so the stream stays aligned across policies.
                    let repaired = rng.random::<f64>() < self.policy.repair_prob;
                    if missing.contains(&t) && !present.contains(&t) && repaired {
                        actions.push(action_json(t));
                    }
                }
            }
            None => {
                for t in ActionType::MANDATORY {
                    if rng.random::<f64>() < self.policy.include_prob.get(t) {
                        actions.push(action_json(t));
                    }
                }
            }
        }

        let c = self.policy.confidence;
        let u: f64 = rng.random_range(-1.0..=1.0);
        let confidence = ((c.mean + c.spread * u).clamp(0.0, 1.0) * 100.0).round() / 100.0;
        json!({"actions": actions, "confidence": confidence}).to_string()
    }
}

fn action_json(t: ActionType) -> Value {
    let (text, hours) = details(t);
    json!({"type": label(t), "details": text, "deadline_hours": hours})
}

impl PlannerBackend for ScriptedBackend {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn generate(&self, context: &PromptContext) -> Result<String, BackendError> {
        if let Some(ms) = self.policy.latency_ms {
            let delay = Duration::from_millis(ms);
            match &self.clock {
                Some(clock) => clock.advance(delay),
                None => std::thread::sleep(delay),
            }
        }
        Ok(self.render(context))
    }
}
