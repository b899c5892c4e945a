use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use super::action::ActionType;
use crate::guidelines::{query_for_snapshot, RetrievalIndex};
use crate::hash::Fnv1a;
use crate::snapshot::PatientSnapshot;

pub const PROMPT_TEMPLATE_VERSION: &str = "planner-prompt/1";

pub const SYSTEM_PROMPT: &str = "\
You are a discharge planning assistant. Using only the patient summary and \
guideline excerpts provided, produce a discharge action plan.

Return a single JSON object and nothing else, with this shape:
{\"actions\": [{\"type\": string, \"details\": string, \"deadline_hours\": number}], \"confidence\": number}

Every plan must cover these four categories, each as at least one action whose \
type is exactly the category name:
- follow_up: follow-up appointments
- medication_reconciliation: medication reconciliation
- patient_education: patient education
- symptom_monitoring: symptom monitoring

deadline_hours is the number of hours after discharge by which the action is due. \
confidence is your probability, between 0 and 1, that the plan is complete.";

/// Everything the backend sees for one generation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptContext {
    pub snapshot_text: String,
    pub guideline_snippets: Vec<String>,
    pub snippet_ids: Vec<String>,
    pub prior_draft: Option<String>,
    pub missing_categories: Option<Vec<ActionType>>,
    /// Digest of (snapshot content hash, snippet ids, template version).
    pub cache_key: String,
    pub template_version: String,
}

impl PromptContext {
    /// Copy of a base context carrying a prior draft and the categories it lacked.
    pub fn with_refinement(&self, prior_draft: Option<String>, missing: Vec<ActionType>) -> Self {
        Self { prior_draft, missing_categories: Some(missing), ..self.clone() }
    }

    pub fn user_prompt(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "PATIENT SUMMARY\n{}", self.snapshot_text.trim_end());
        if !self.guideline_snippets.is_empty() {
            let _ = writeln!(out, "\nGUIDELINE EXCERPTS");
            for (id, s) in self.snippet_ids.iter().zip(&self.guideline_snippets) {
                let _ = writeln!(out, "[{id}] {s}");
            }
        }
        if let Some(prior) = &self.prior_draft {
            let _ = writeln!(out, "\nPREVIOUS DRAFT\n{prior}");
        }
        if let Some(missing) = self.missing_categories.as_ref().filter(|m| !m.is_empty()) {
            let names: Vec<_> = missing.iter().map(|m| m.as_str()).collect();
            let _ = writeln!(
                out,
                "\nThe previous draft is missing these required categories: {}. \
                 Return a complete revised plan that keeps the existing actions and adds the missing ones.",
                names.join(", ")
            );
        }
        out
    }

    /// Digest over every field a backend may read, used to seed scripted generation.
    pub fn content_digest(&self) -> u64 {
        let mut h = Fnv1a::new();
        h.field(self.cache_key.as_bytes());
        h.field(self.prior_draft.as_deref().unwrap_or("").as_bytes());
        for m in self.missing_categories.iter().flatten() {
            h.field(m.as_str().as_bytes());
        }
        h.finish()
    }
}

/// Shared cache of base (draft-0) prompt contexts.
#[derive(Debug, Default)]
pub struct ContextCache {
    entries: RwLock<HashMap<String, Arc<PromptContext>>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl ContextCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: &str) -> Option<Arc<PromptContext>> {
        self.entries.read().expect("cache lock").get(key).cloned()
    }

    pub fn insert(&self, key: String, ctx: Arc<PromptContext>) -> Arc<PromptContext> {
        self.entries.write().expect("cache lock").entry(key).or_insert(ctx).clone()
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }
}

#[derive(Debug, Clone)]
pub struct ContextBuild {
    pub context: Arc<PromptContext>,
    pub cache_hit: bool,
    pub retrieval_performed: bool,
}

/// Key under which a base context is cached. Retrieval is a pure function of
/// (snapshot, index, k), so this determines the snippet ids in advance.
fn lookup_key(snapshot: &PatientSnapshot, index: &RetrievalIndex, k: usize) -> String {
    Fnv1a::new()
        .field(snapshot.content_hash().as_bytes())
        .field(index.fingerprint().as_bytes())
        .field(&(k as u64).to_le_bytes())
        .field(PROMPT_TEMPLATE_VERSION.as_bytes())
        .hex()
}

pub fn context_cache_key(content_hash: &str, snippet_ids: &[String]) -> String {
    let mut h = Fnv1a::new();
    h.field(content_hash.as_bytes());
    for id in snippet_ids {
        h.field(id.as_bytes());
    }
    h.field(PROMPT_TEMPLATE_VERSION.as_bytes()).hex()
}

fn construct(snapshot: &PatientSnapshot, index: &RetrievalIndex, k: usize) -> PromptContext {
    let hits = index.retrieve(&query_for_snapshot(snapshot), k);
    let snippet_ids: Vec<String> = hits.iter().map(|(c, _)| c.chunk_id.clone()).collect();
    PromptContext {
        snapshot_text: snapshot.text_summary.clone(),
        guideline_snippets: hits.iter().map(|(c, _)| c.text.clone()).collect(),
        cache_key: context_cache_key(snapshot.content_hash(), &snippet_ids),
        snippet_ids,
        prior_draft: None,
        missing_categories: None,
        template_version: PROMPT_TEMPLATE_VERSION.to_string(),
    }
}

/// Builds the draft-0 context, serving it from `cache` when caching is on.
pub fn build_context(
    snapshot: &PatientSnapshot,
    index: &RetrievalIndex,
    cache: &ContextCache,
    enable_cache: bool,
    k: usize,
) -> ContextBuild {
    if !enable_cache {
        return ContextBuild {
            context: Arc::new(construct(snapshot, index, k)),
            cache_hit: false,
            retrieval_performed: true,
        };
    }
    let key = lookup_key(snapshot, index, k);
    if let Some(context) = cache.get(&key) {
        cache.hits.fetch_add(1, Ordering::Relaxed);
        return ContextBuild { context, cache_hit: true, retrieval_performed: false };
    }
    cache.misses.fetch_add(1, Ordering::Relaxed);
    let context = cache.insert(key, Arc::new(construct(snapshot, index, k)));
    ContextBuild { context, cache_hit: false, retrieval_performed: true }
}
