//! Reliability evaluation for LLM discharge planning: FHIR ingestion,
//! patient snapshots, guideline retrieval, a Planner with optional context
//! caching and self-refinement, an Auditor, a discrepancy buffer and the
//! ablation harness tying them together.

pub mod auditor;
pub mod buffer;
pub mod clock;
pub mod guidelines;
pub mod harness;
pub mod hash;
pub mod ingest;
pub mod planner;
pub mod snapshot;
