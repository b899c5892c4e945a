mod common;

use std::collections::BTreeSet;
use std::sync::Mutex;

use common::*;
use discharge_core::buffer::DiscrepancyStore;
use discharge_core::harness::{
    list_samples, read_sample, replay_run_id, write_comparison, Cohort, ConfigName, EpisodeResult, Harness,
    HarnessError, NoopObserver, RunConfig, RunObserver, RunSummary, SKIP_EMPTY_SNAPSHOT,
};
use discharge_core::ingest::{assemble_bundles, parse_resource};
use discharge_core::planner::ActionType;

fn covered(r: &EpisodeResult) -> BTreeSet<ActionType> {
    let c = &r.audit.as_ref().unwrap().coverage;
    ActionType::MANDATORY.into_iter().filter(|t| c.has(*t)).collect()
}

fn run(h: &Harness, name: ConfigName, seed: u64, dir: &std::path::Path) -> discharge_core::harness::RunOutcome {
    let cfg = RunConfig::new(name).with_seed(seed);
    h.run(&cfg, &format!("{name}-seed{seed}"), &dir.join(name.as_str()), &NoopObserver).unwrap()
}

#[test]
fn ablation_over_cohort() {
    let dir = tempfile::tempdir().unwrap();
    let h = scripted_harness("policy_default.json", 7, dir.path());
    let outs: Vec<_> = ConfigName::ABLATION.into_iter().map(|n| run(&h, n, 7, dir.path())).collect();
    for o in &outs {
        let s = &o.summary;
        eprintln!(
            "{:<24} cover={:.3} brier={:.3} ece={:.3} lat={:.2} hc={} drift={:.3}",
            s.config_name, s.coverage_all_rate, s.brier, s.ece, s.mean_latency_s, s.high_conf_error_count, s.mean_drift_l1
        );
        assert_eq!(s.n, 50);
        assert_eq!(s.skipped, 0);
        assert_eq!(s.pass_count + s.fail_count, 50);
        assert!(o.episodes.iter().all(EpisodeResult::is_consistent));
    }
    let base = &outs[0];
    for o in &outs[1..] {
        if o.summary.config_name == ConfigName::ContextCache {
            // Caching does not change plans.
            let a: Vec<_> = base.episodes.iter().map(|e| &e.plan.as_ref().unwrap().actions).collect();
            let b: Vec<_> = o.episodes.iter().map(|e| &e.plan.as_ref().unwrap().actions).collect();
            assert_eq!(a, b);
            continue;
        }
        for (b, r) in base.episodes.iter().zip(&o.episodes) {
            assert_eq!(b.patient_id, r.patient_id);
            assert!(covered(b).is_subset(&covered(r)), "{}", r.episode_id);
        }
    }
    // Cache hits accumulate across runs in one session.
    let hits = |o: &discharge_core::harness::RunOutcome| o.episodes.iter().filter(|e| e.cache_hit).count();
    assert_eq!(hits(&outs[1]), 0);
    assert_eq!(hits(&outs[3]), 50);
}

#[test]
fn summaries_are_reproducible() {
    let bytes = |seed| {
        let dir = tempfile::tempdir().unwrap();
        let h = scripted_harness("policy_default.json", seed, dir.path());
        let s: Vec<RunSummary> =
            ConfigName::ABLATION.into_iter().map(|n| run(&h, n, seed, dir.path()).summary).collect();
        write_comparison(dir.path(), &s).unwrap();
        std::fs::read(dir.path().join("summary.json")).unwrap()
    };
    assert_eq!(bytes(11), bytes(11));
    assert_ne!(bytes(11), bytes(12));
}

#[test]
fn samples_on_disk_match_results() {
    let dir = tempfile::tempdir().unwrap();
    let h = scripted_harness("policy_default.json", 3, dir.path());
    let out = run(&h, ConfigName::SelfImprove, 3, dir.path());
    let files = list_samples(&out.run_dir).unwrap();
    assert_eq!(files.len(), 50);
    for (f, e) in files.iter().zip(&out.episodes) {
        assert_eq!(&read_sample(f).unwrap(), e);
    }
    let summary: RunSummary =
        serde_json::from_str(&std::fs::read_to_string(out.run_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary, out.summary);
}

#[test]
fn ineligible_patients_are_skipped() {
    let lines = [
        r#"{"resourceType":"Patient","id":"full","gender":"female"}"#,
        r#"{"resourceType":"Encounter","id":"e1","status":"finished","subject":{"reference":"Patient/full"},"period":{"start":"2024-01-01"}}"#,
        r#"{"resourceType":"Patient","id":"empty","gender":"male"}"#,
    ];
    let bundles = assemble_bundles(lines.iter().map(|l| parse_resource(l).unwrap()).collect()).bundles;
    let dir = tempfile::tempdir().unwrap();
    let h = Harness::scripted(
        Cohort::from_bundles_unfiltered(bundles),
        index(),
        policy("policy_default.json"),
        1,
        DiscrepancyStore::new(dir.path().join("b.jsonl")),
    );
    let out = h.run(&RunConfig::new(ConfigName::Baseline), "r", dir.path(), &NoopObserver).unwrap();
    assert_eq!(out.summary.n, 1);
    assert_eq!(out.summary.skipped, 1);
    let skipped = out.episodes.iter().find(|e| e.skipped).unwrap();
    assert_eq!(skipped.patient_id, "empty");
    assert_eq!(skipped.skip_reason.as_deref(), Some(SKIP_EMPTY_SNAPSHOT));
    assert!(skipped.plan.is_none() && skipped.audit.is_none());
}

#[test]
fn all_skipped_is_an_error() {
    let bundles = assemble_bundles(vec![parse_resource(r#"{"resourceType":"Patient","id":"x"}"#).unwrap()]).bundles;
    let dir = tempfile::tempdir().unwrap();
    let h = Harness::scripted(
        Cohort::from_bundles_unfiltered(bundles),
        index(),
        policy("policy_default.json"),
        1,
        DiscrepancyStore::new(dir.path().join("b.jsonl")),
    );
    let err = h.run(&RunConfig::new(ConfigName::Baseline), "r", dir.path(), &NoopObserver).unwrap_err();
    assert!(matches!(err, HarnessError::NoEpisodes));
}

#[test]
fn buffer_collects_high_confidence_failures_and_replay_repairs_them() {
    let dir = tempfile::tempdir().unwrap();
    let h = scripted_harness("policy_default.json", 5, dir.path());
    let replay_cfg = RunConfig::new(ConfigName::BufferReplay);
    assert!(matches!(h.run(&replay_cfg, "r0", dir.path(), &NoopObserver), Err(HarnessError::EmptyBuffer)));

    let base = run(&h, ConfigName::Baseline, 5, dir.path());
    let pending = h.buffer.pending().unwrap();
    assert_eq!(pending.len(), base.summary.high_conf_error_count);
    assert!(!pending.is_empty());
    for e in &pending {
        assert!(e.confidence >= 0.8 && !e.missing.is_empty());
    }

    let replayer = scripted_harness("policy_replay.json", 5, dir.path());
    let rid = replay_run_id(&pending);
    let out = replayer.run(&replay_cfg, &rid, &dir.path().join("replay"), &NoopObserver).unwrap();
    assert_eq!(out.summary.n, pending.len());
    assert_eq!(out.summary.config_name, ConfigName::BufferReplay);
    assert!(out.summary.coverage_all_rate >= 0.9, "{}", out.summary.coverage_all_rate);

    let entries = replayer.buffer.entries().unwrap();
    for e in &pending {
        let now = entries.iter().find(|x| x.entry_id == e.entry_id).unwrap();
        assert!(now.replayed);
        assert_eq!(now.replay_outcome.as_ref().unwrap().run_id, rid);
    }
}

#[test]
fn parallel_workers_produce_the_same_plans() {
    let dir = tempfile::tempdir().unwrap();
    let serial = run(&scripted_harness("policy_default.json", 9, dir.path()), ConfigName::SelfImprove, 9, dir.path());
    let h = scripted_harness("policy_default.json", 9, dir.path());
    let mut cfg = RunConfig::new(ConfigName::SelfImprove).with_seed(9);
    cfg.worker_count = 4;
    let par = h.run(&cfg, "par", &dir.path().join("par"), &NoopObserver).unwrap();
    assert_eq!(par.summary.n, 50);
    assert_eq!(par.summary.coverage_all_rate, serial.summary.coverage_all_rate);
    let plans = |o: &discharge_core::harness::RunOutcome| {
        o.episodes.iter().map(|e| (e.episode_id.clone(), e.plan.clone().unwrap().actions)).collect::<Vec<_>>()
    };
    assert_eq!(plans(&par), plans(&serial));
}

#[derive(Default)]
struct Recorder(Mutex<Vec<String>>);

impl RunObserver for Recorder {
    fn episode_started(&self, _: &str, _: usize, id: &str, _: &str) {
        self.0.lock().unwrap().push(format!("start {id}"));
    }
    fn episode_completed(&self, _: &str, r: &EpisodeResult) {
        self.0.lock().unwrap().push(format!("done {}", r.episode_id));
    }
    fn run_completed(&self, _: &str, s: Result<&RunSummary, &HarnessError>) {
        self.0.lock().unwrap().push(format!("end {}", s.is_ok()));
    }
}

#[test]
fn observer_sees_two_events_per_episode_and_one_completion() {
    let dir = tempfile::tempdir().unwrap();
    let h = scripted_harness("policy_default.json", 2, dir.path());
    let rec = Recorder::default();
    let cfg = RunConfig::new(ConfigName::Baseline).with_patient_limit(12);
    h.run(&cfg, "obs", dir.path(), &rec).unwrap();
    let ev = rec.0.into_inner().unwrap();
    assert_eq!(ev.len(), 2 * 12 + 1);
    assert_eq!(ev.last().unwrap(), "end true");
    assert_eq!(ev[0], "start 0001-p001");
    assert_eq!(ev[1], "done 0001-p001");
}
