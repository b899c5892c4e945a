//! In-memory lexical retrieval over guideline chunks (TF-IDF + cosine).

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::Fnv1a;
use crate::snapshot::PatientSnapshot;

pub const DEFAULT_TOP_K: usize = 3;

#[derive(Debug, Error)]
pub enum GuidelineError {
    #[error("duplicate chunk id: {0}")]
    DuplicateChunkId(String),
    #[error("chunk {0} has empty text")]
    EmptyText(String),
    #[error("cannot read guideline file {path}: {message}")]
    Load { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuidelineChunk {
    pub chunk_id: String,
    pub text: String,
    pub source_label: String,
}

/// Lowercase alphanumeric word splitting.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn term_counts(text: &str) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for t in tokenize(text) {
        *counts.entry(t).or_insert(0) += 1;
    }
    counts
}

type SparseVector = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RetrievalIndex {
    chunks: Vec<GuidelineChunk>,
    doc_freq: BTreeMap<String, usize>,
    /// Unit-length TF-IDF vector per chunk, parallel to `chunks`.
    vectors: Vec<SparseVector>,
}

impl RetrievalIndex {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn build(chunks: Vec<GuidelineChunk>) -> Result<Self, GuidelineError> {
        let mut seen = BTreeSet::new();
        for c in &chunks {
            if !seen.insert(c.chunk_id.as_str()) {
                return Err(GuidelineError::DuplicateChunkId(c.chunk_id.clone()));
            }
            if c.text.trim().is_empty() {
                return Err(GuidelineError::EmptyText(c.chunk_id.clone()));
            }
        }
        let counts: Vec<_> = chunks.iter().map(|c| term_counts(&c.text)).collect();
        let mut doc_freq = BTreeMap::new();
        for tc in &counts {
            for term in tc.keys() {
                *doc_freq.entry(term.clone()).or_insert(0) += 1;
            }
        }
        let mut index = Self { chunks, doc_freq, vectors: Vec::new() };
        index.vectors = counts.iter().map(|tc| index.weigh(tc)).collect();
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn chunks(&self) -> &[GuidelineChunk] {
        &self.chunks
    }

    pub fn doc_freq(&self) -> &BTreeMap<String, usize> {
        &self.doc_freq
    }

    /// Smoothed inverse document frequency, `ln((1 + N) / (1 + df)) + 1`.
    pub fn idf(&self, term: &str) -> Option<f64> {
        let df = *self.doc_freq.get(term)?;
        let n = self.chunks.len() as f64;
        Some(((1.0 + n) / (1.0 + df as f64)).ln() + 1.0)
    }

    pub fn vector(&self, i: usize) -> &BTreeMap<String, f64> {
        &self.vectors[i]
    }

    /// Log-scaled TF times IDF, L2-normalized. Terms outside the vocabulary are dropped.
    fn weigh(&self, counts: &BTreeMap<String, usize>) -> SparseVector {
        let mut v: SparseVector = counts
            .iter()
            .filter_map(|(t, &tf)| Some((t.clone(), (1.0 + (tf as f64).ln()) * self.idf(t)?)))
            .collect();
        let norm = v.values().map(|w| w * w).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.values_mut().for_each(|w| *w /= norm);
        }
        v
    }

    /// Top `k` chunks by cosine similarity, ties broken by ascending chunk id.
    pub fn retrieve(&self, query: &str, k: usize) -> Vec<(&GuidelineChunk, f64)> {
        if self.chunks.is_empty() || k == 0 {
            return Vec::new();
        }
        let q = self.weigh(&term_counts(query));
        let mut scored: Vec<(&GuidelineChunk, f64)> = self
            .chunks
            .iter()
            .zip(&self.vectors)
            .map(|(c, v)| (c, q.iter().filter_map(|(t, w)| v.get(t).map(|x| w * x)).sum()))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.chunk_id.cmp(&b.0.chunk_id)));
        scored.truncate(k);
        scored
    }

    /// Identifies the chunk set; part of the context cache lookup key.
    pub fn fingerprint(&self) -> String {
        let mut h = Fnv1a::new();
        for c in &self.chunks {
            h.field(c.chunk_id.as_bytes()).field(c.text.as_bytes());
        }
        h.hex()
    }
}

pub fn index_chunks(chunks: Vec<GuidelineChunk>) -> Result<RetrievalIndex, GuidelineError> {
    RetrievalIndex::build(chunks)
}

/// Reads a JSON array of `{chunk_id, text, source_label}`.
pub fn load_chunks(path: impl AsRef<Path>) -> Result<Vec<GuidelineChunk>, GuidelineError> {
    let path = path.as_ref();
    let err = |message: String| GuidelineError::Load { path: path.display().to_string(), message };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| err(e.to_string()))
}

/// Retrieval query for a patient: condition then medication display strings.
pub fn query_for_snapshot(snapshot: &PatientSnapshot) -> String {
    snapshot
        .conditions
        .iter()
        .chain(&snapshot.medications)
        .map(|i| i.display.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}
