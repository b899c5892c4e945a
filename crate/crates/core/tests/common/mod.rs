#![allow(dead_code)]

use std::path::PathBuf;

use discharge_core::buffer::DiscrepancyStore;
use discharge_core::guidelines::{index_chunks, load_chunks, RetrievalIndex};
use discharge_core::harness::{Cohort, Harness};
use discharge_core::ingest::{assemble_bundles, load_ndjson, ActiveFilterPolicy, PatientBundle};
use discharge_core::planner::ScriptedPolicy;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn bundles(name: &str) -> Vec<PatientBundle> {
    let report = load_ndjson(fixtures().join(name)).expect("fixture loads");
    assert!(report.warnings.is_empty(), "{:?}", report.warnings);
    assemble_bundles(report.resources).bundles
}

pub fn index() -> RetrievalIndex {
    index_chunks(load_chunks(fixtures().join("guidelines.json")).unwrap()).unwrap()
}

pub fn policy(name: &str) -> ScriptedPolicy {
    ScriptedPolicy::from_json(&std::fs::read_to_string(fixtures().join(name)).unwrap()).unwrap()
}

pub fn cohort50() -> Cohort {
    Cohort::from_bundles(bundles("cohort50"), 50, &ActiveFilterPolicy::default())
}

pub fn scripted_harness(policy_file: &str, seed: u64, dir: &std::path::Path) -> Harness {
    Harness::scripted(cohort50(), index(), policy(policy_file), seed, DiscrepancyStore::new(dir.join("buffer.jsonl")))
}

/// Serves `router` on an ephemeral local port from a background runtime and
/// returns its base URL (with trailing slash).
pub fn serve(router: axum::Router) -> String {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, router).await.unwrap();
        });
    });
    format!("http://{}/", rx.recv().unwrap())
}
