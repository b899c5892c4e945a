use std::io::Write;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use discharge_core::buffer::{entry_id, DiscrepancyEntry, DiscrepancyStore, ReplayOutcome};
use discharge_core::planner::{ActionItem, ActionPlan, ActionType};

fn entry(i: usize) -> DiscrepancyEntry {
    let types = &ActionType::MANDATORY[..1 + i % 3];
    DiscrepancyEntry {
        entry_id: entry_id("run-a", &format!("{i:04}-p{i}")),
        patient_id: format!("p{i}"),
        run_id: "run-a".into(),
        config_name: "baseline".into(),
        plan: ActionPlan {
            actions: types
                .iter()
                .map(|t| ActionItem {
                    action_type: *t,
                    raw_type_label: format!("label \"{i}\"\n"),
                    details: format!("details {i} ✓"),
                    deadline_hours: i as f64 / 3.0,
                })
                .collect(),
            confidence: 0.8 + (i % 20) as f64 / 100.0,
            draft_index: (i % 2) as u32,
            backend_id: "scripted".into(),
            episode_id: format!("{i:04}-p{i}"),
        },
        confidence: 0.8 + (i % 20) as f64 / 100.0,
        missing: ActionType::MANDATORY[1 + i % 3..].to_vec(),
        created_at: DateTime::<Utc>::from_timestamp(1_700_000_000 + i as i64, 123_456_789).unwrap(),
        replayed: false,
        replay_outcome: None,
    }
}

#[test]
fn hundred_entries_round_trip_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let store = DiscrepancyStore::new(dir.path().join("nested/buffer.jsonl"));
    let written: Vec<_> = (0..100).map(entry).collect();
    for e in &written {
        assert!(store.append(e).unwrap());
    }
    let reopened = DiscrepancyStore::new(store.path());
    assert_eq!(reopened.entries().unwrap(), written);
    assert_eq!(reopened.pending().unwrap().len(), 100);
}

#[test]
fn duplicate_appends_are_noops() {
    let dir = tempfile::tempdir().unwrap();
    let store = DiscrepancyStore::new(dir.path().join("b.jsonl"));
    for i in 0..7 {
        store.append(&entry(i)).unwrap();
    }
    let size = std::fs::metadata(store.path()).unwrap().len();
    for i in 0..7 {
        assert!(!store.append(&entry(i)).unwrap());
    }
    assert_eq!(std::fs::metadata(store.path()).unwrap().len(), size);
    assert_eq!(store.entries().unwrap().len(), 7);
}

#[test]
fn torn_final_line_is_skipped_and_healed() {
    let dir = tempfile::tempdir().unwrap();
    let store = DiscrepancyStore::new(dir.path().join("b.jsonl"));
    for i in 0..3 {
        store.append(&entry(i)).unwrap();
    }
    let line = serde_json::to_string(&entry(3)).unwrap();
    let mut f = std::fs::OpenOptions::new().append(true).open(store.path()).unwrap();
    f.write_all(&line.as_bytes()[..line.len() / 2]).unwrap();
    drop(f);

    let contents = store.load().unwrap();
    assert_eq!(contents.entries.len(), 3);
    assert_eq!(contents.warnings.len(), 1);

    // The next append starts on a fresh line and the torn record stays ignored.
    assert!(store.append(&entry(4)).unwrap());
    let contents = store.load().unwrap();
    let ids: Vec<_> = contents.entries.iter().map(|e| e.patient_id.clone()).collect();
    assert_eq!(ids, ["p0", "p1", "p2", "p4"]);
    assert_eq!(contents.warnings.len(), 1);
}

#[test]
fn replay_marks_survive_restart() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("b.jsonl");
    {
        let store = DiscrepancyStore::new(&path);
        for i in 0..5 {
            store.append(&entry(i)).unwrap();
        }
        let id = entry(2).entry_id;
        store.mark_replayed(&id, ReplayOutcome { coverage_all: true, run_id: "replay-1".into() }).unwrap();
        assert!(store.mark_replayed("nope", ReplayOutcome { coverage_all: false, run_id: "x".into() }).is_err());
    }
    let store = DiscrepancyStore::new(&path);
    let entries = store.entries().unwrap();
    assert_eq!(entries.len(), 5);
    let marked = entries.iter().find(|e| e.patient_id == "p2").unwrap();
    assert!(marked.replayed);
    assert_eq!(marked.replay_outcome, Some(ReplayOutcome { coverage_all: true, run_id: "replay-1".into() }));
    assert_eq!(store.pending().unwrap().len(), 4);
    // Position in the listing is unchanged by the update.
    assert_eq!(entries[2].patient_id, "p2");
}

#[test]
fn concurrent_appends_do_not_interleave() {
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(DiscrepancyStore::new(dir.path().join("b.jsonl")));
    std::thread::scope(|s| {
        for t in 0..4 {
            let store = store.clone();
            s.spawn(move || {
                for i in 0..25 {
                    store.append(&entry(t * 25 + i)).unwrap();
                }
            });
        }
    });
    let contents = store.load().unwrap();
    assert!(contents.warnings.is_empty());
    assert_eq!(contents.entries.len(), 100);
}
