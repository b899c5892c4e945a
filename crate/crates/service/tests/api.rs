use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use discharge_core::guidelines::{index_chunks, load_chunks};
use discharge_core::harness::BackendSpec;
use discharge_core::planner::{backend_configured, ScriptedPolicy};
use discharge_service::{router, AppState, ServiceConfig};
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn policy(name: &str) -> ScriptedPolicy {
    ScriptedPolicy::from_json(&std::fs::read_to_string(fixtures().join(name)).unwrap()).unwrap()
}

fn config(dir: &Path) -> ServiceConfig {
    let index = index_chunks(load_chunks(fixtures().join("guidelines.json")).unwrap()).unwrap();
    let mut cfg = ServiceConfig::new(
        dir.join("runs"),
        fixtures().join("cohort50").display().to_string(),
        index,
        BackendSpec::Scripted(policy("policy_default.json")),
    );
    cfg.replay_backend = Some(BackendSpec::Scripted(policy("policy_replay.json")));
    cfg.buffer_path = dir.join("buffer.jsonl");
    cfg.default_seed = 7;
    cfg
}

/// Serves the API from a background runtime; returns the base URL without a trailing slash.
fn start(cfg: ServiceConfig) -> String {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap();
        rt.block_on(async move {
            let app = router(AppState::new(cfg));
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    format!("http://{}", rx.recv().unwrap())
}

fn get(base: &str, path: &str) -> (StatusCode, Value) {
    let resp = Client::new().get(format!("{base}{path}")).send().unwrap();
    let status = resp.status();
    (status, resp.json().unwrap_or(Value::Null))
}

fn post(base: &str, path: &str, body: Value) -> (StatusCode, Value) {
    let resp = Client::new().post(format!("{base}{path}")).json(&body).send().unwrap();
    let status = resp.status();
    (status, resp.json().unwrap_or(Value::Null))
}

fn wait_terminal(base: &str, run_id: &str) -> Value {
    let deadline = Instant::now() + Duration::from_secs(60);
    loop {
        let (status, handle) = get(base, &format!("/api/runs/{run_id}"));
        assert_eq!(status, StatusCode::OK);
        if matches!(handle["state"].as_str(), Some("completed" | "failed")) {
            return handle;
        }
        assert!(Instant::now() < deadline, "run {run_id} did not finish");
        std::thread::sleep(Duration::from_millis(20));
    }
}

/// (id, payload) pairs of an SSE body.
fn sse_events(base: &str, run_id: &str, last_id: Option<u64>) -> Vec<(u64, Value)> {
    let mut req = Client::new().get(format!("{base}/api/runs/{run_id}/events"));
    if let Some(k) = last_id {
        req = req.header("Last-Event-Id", k.to_string());
    }
    let resp = req.send().unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert!(resp.headers()["content-type"].to_str().unwrap().starts_with("text/event-stream"));
    let text = resp.text().unwrap();
    let mut out = Vec::new();
    let mut id = None;
    for line in text.lines() {
        if let Some(v) = line.strip_prefix("id:") {
            id = Some(v.trim().parse::<u64>().unwrap());
        } else if let Some(v) = line.strip_prefix("data:") {
            out.push((id.take().expect("id precedes data"), serde_json::from_str(v.trim()).unwrap()));
        }
    }
    out
}

fn launch(base: &str, body: Value) -> String {
    let (status, resp) = post(base, "/api/runs", body);
    assert_eq!(status, StatusCode::ACCEPTED, "{resp}");
    resp["run_ids"][0].as_str().unwrap().to_string()
}

#[test]
fn health_reports_version_and_backend() {
    let dir = tempfile::tempdir().unwrap();
    let base = start(config(dir.path()));
    let (status, body) = get(&base, "/api/health");
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
    assert_eq!(body["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(body["backend_configured"], backend_configured());
}

#[test]
fn run_lifecycle_matches_disk() {
    let dir = tempfile::tempdir().unwrap();
    let base = start(config(dir.path()));
    assert_eq!(get(&base, "/api/runs"), (StatusCode::OK, json!([])));

    let (status, resp) = post(&base, "/api/runs", json!({"configs": ["baseline"], "seed": 7}));
    assert_eq!(status, StatusCode::ACCEPTED);
    assert_eq!(resp["run_ids"].as_array().unwrap().len(), 1);
    let run_id = resp["run_ids"][0].as_str().unwrap().to_string();
    let first = &resp["runs"][0];
    assert_eq!(first["state"], "queued");
    assert_eq!(first["progress"]["episodes_total"], 50);
    assert!(first.get("summary").is_none());

    let handle = wait_terminal(&base, &run_id);
    assert_eq!(handle["state"], "completed");
    assert_eq!(handle["progress"]["episodes_done"], 50);
    assert_eq!(handle["config"]["name"], "baseline");
    let on_disk: Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("runs").join(&run_id).join("summary.json")).unwrap(),
    )
    .unwrap();
    // serde_json maps are key-sorted, so this compares canonical encodings.
    assert_eq!(serde_json::to_string(&handle["summary"]).unwrap(), serde_json::to_string(&on_disk).unwrap());

    let (_, list) = get(&base, "/api/runs");
    assert_eq!(list.as_array().unwrap().len(), 1);
    assert_eq!(list[0]["run_id"], run_id.as_str());
}

#[test]
fn samples_pagination_concatenates_to_directory() {
    let dir = tempfile::tempdir().unwrap();
    let base = start(config(dir.path()));
    let run_id = launch(&base, json!({"configs": ["self_improve"]}));
    wait_terminal(&base, &run_id);

    let (_, page) = get(&base, &format!("/api/runs/{run_id}/samples?limit=10"));
    assert_eq!(page["items"].as_array().unwrap().len(), 10);
    assert_eq!(page["next_offset"], 10);
    assert_eq!(page["total"], 50);

    let (_, beyond) = get(&base, &format!("/api/runs/{run_id}/samples?offset=500&limit=10"));
    assert_eq!(beyond["items"], json!([]));
    assert_eq!(beyond["next_offset"], Value::Null);

    let mut collected = Vec::new();
    let mut offset = Some(0u64);
    while let Some(o) = offset {
        let (status, page) = get(&base, &format!("/api/runs/{run_id}/samples?offset={o}&limit=7"));
        assert_eq!(status, StatusCode::OK);
        collected.extend(page["items"].as_array().unwrap().iter().cloned());
        offset = page["next_offset"].as_u64();
    }

    let samples = dir.path().join("runs").join(&run_id).join("samples");
    let mut files: Vec<PathBuf> = std::fs::read_dir(&samples).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    let expected: Vec<Value> =
        files.iter().map(|p| serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()).collect();
    assert_eq!(collected.len(), 50);
    assert_eq!(collected, expected);
}

#[test]
fn events_count_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let base = start(config(dir.path()));
    let run_id = launch(&base, json!({"configs": ["baseline"], "limit": 20}));

    // Subscribed before completion: follows the live log to the end.
    let live = sse_events(&base, &run_id, None);
    let n = 20;
    assert_eq!(live.len(), 2 * n + 1);
    let ids: Vec<u64> = live.iter().map(|(id, _)| *id).collect();
    assert_eq!(ids, (1..=(2 * n as u64 + 1)).collect::<Vec<_>>());
    for (id, payload) in &live {
        assert_eq!(payload["seq"].as_u64(), Some(*id));
        assert_eq!(payload["run_id"], run_id.as_str());
    }
    assert_eq!(live.last().unwrap().1["type"], "run_completed");
    assert_eq!(live.last().unwrap().1["state"], "completed");
    let started = live.iter().filter(|(_, p)| p["type"] == "episode_started").count();
    let completed: Vec<&Value> = live.iter().map(|(_, p)| p).filter(|p| p["type"] == "episode_completed").collect();
    assert_eq!((started, completed.len()), (n, n));
    assert!(completed.iter().all(|p| p["audit"]["verdict"].is_string()));

    for k in [0u64, 1, 17, 40, 41] {
        let resumed = sse_events(&base, &run_id, Some(k));
        assert_eq!(resumed.len() as u64, 41 - k);
        if let Some((first, _)) = resumed.first() {
            assert_eq!(*first, k + 1);
        }
        let mut joined: Vec<u64> = ids.iter().copied().filter(|&i| i <= k).collect();
        joined.extend(resumed.iter().map(|(id, _)| *id));
        assert_eq!(joined, ids, "resume at {k} duplicated or dropped events");
    }

    let q = Client::new().get(format!("{base}/api/runs/{run_id}/events?last_event_id=39")).send().unwrap();
    let text = q.text().unwrap();
    assert!(text.contains("id: 40") || text.contains("id:40"));
    assert!(!text.contains("id: 39") && !text.contains("id:39"));
}

#[test]
fn replay_requires_pending_entries() {
    let dir = tempfile::tempdir().unwrap();
    let base = start(config(dir.path()));
    assert_eq!(get(&base, "/api/buffer"), (StatusCode::OK, json!([])));

    let (status, body) = post(&base, "/api/replay", json!({}));
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"]["code"], "conflict");
    let (status, _) = post(&base, "/api/runs", json!({"configs": ["buffer_replay"]}));
    assert_eq!(status, StatusCode::CONFLICT);

    // "all" on an empty buffer means the four ablation configs only.
    let (status, resp) = post(&base, "/api/runs", json!({"configs": ["all"], "limit": 5}));
    assert_eq!(status, StatusCode::ACCEPTED);
    let names: Vec<&str> = resp["runs"].as_array().unwrap().iter().map(|r| r["config"]["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["baseline", "context_cache", "self_improve", "cache_and_self_improve"]);
}

#[test]
fn replay_flow_through_buffer() {
    let dir = tempfile::tempdir().unwrap();
    let base = start(config(dir.path()));
    let run_id = launch(&base, json!({"configs": ["baseline"]}));
    let handle = wait_terminal(&base, &run_id);
    let hc = handle["summary"]["high_conf_error_count"].as_u64().unwrap();
    assert!(hc > 0);

    let (_, pending) = get(&base, "/api/buffer");
    assert_eq!(pending.as_array().unwrap().len() as u64, hc);

    let (status, replay) = post(&base, "/api/replay", json!({}));
    assert_eq!(status, StatusCode::ACCEPTED, "{replay}");
    assert_eq!(replay["progress"]["episodes_total"].as_u64(), Some(hc));
    assert_eq!(replay["config"]["name"], "buffer_replay");
    let (second, _) = post(&base, "/api/replay", json!({}));
    assert_eq!(second, StatusCode::CONFLICT);

    let done = wait_terminal(&base, replay["run_id"].as_str().unwrap());
    assert_eq!(done["state"], "completed");
    assert_eq!(done["summary"]["n"].as_u64(), Some(hc));
    assert_eq!(done["summary"]["coverage_all_rate"], 1.0);
    assert_eq!(done["summary"]["fail_rate"], 0.0);

    assert_eq!(get(&base, "/api/buffer").1, json!([]));
    let (_, all) = get(&base, "/api/buffer?include_replayed=true");
    let all = all.as_array().unwrap();
    assert_eq!(all.len() as u64, hc);
    assert!(all.iter().all(|e| e["replayed"] == true && e["replay_outcome"]["coverage_all"] == true));
}

#[test]
fn request_errors() {
    let dir = tempfile::tempdir().unwrap();
    let base = start(config(dir.path()));
    let (status, body) = post(&base, "/api/runs", json!({"configs": ["turbo"]}));
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["code"], "invalid_config");
    let (status, _) = post(&base, "/api/runs", json!({"configs": []}));
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let inconsistent = json!({"name": "baseline", "enable_cache": true, "enable_self_improve": false});
    let (status, _) = post(&base, "/api/runs", json!({"configs": [inconsistent]}));
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, body) = post(&base, "/api/runs", json!({"configs": ["baseline"], "cohort": "/nonexistent/cohort"}));
    assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
    let resp = Client::new().post(format!("{base}/api/runs")).body("not json").header("content-type", "application/json").send().unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
    for path in ["/api/runs/ghost", "/api/runs/ghost/samples", "/api/runs/ghost/events"] {
        let (status, body) = get(&base, path);
        assert_eq!(status, StatusCode::NOT_FOUND, "{path}");
        assert_eq!(body["error"]["code"], "not_found");
    }
    // Failed or rejected submissions leave nothing behind.
    assert_eq!(get(&base, "/api/runs").1, json!([]));
}

#[test]
fn inline_config_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let base = start(config(dir.path()));
    let inline = json!({"name": "self_improve", "enable_cache": false, "enable_self_improve": true, "patient_limit": 3});
    let run_id = launch(&base, json!({"configs": [inline]}));
    let handle = wait_terminal(&base, &run_id);
    assert_eq!(handle["summary"]["n"], 3);
    assert_eq!(handle["config"]["seed"], 7);
}

#[test]
fn bearer_token_gates_api() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    cfg.bearer_token = Some("s3cret".into());
    let base = start(cfg);
    assert_eq!(get(&base, "/api/health").0, StatusCode::OK);
    let (status, body) = get(&base, "/api/runs");
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    assert_eq!(body["error"]["code"], "unauthorized");
    let ok = Client::new().get(format!("{base}/api/runs")).bearer_auth("s3cret").send().unwrap();
    assert_eq!(ok.status(), StatusCode::OK);
    let wrong = Client::new().get(format!("{base}/api/runs")).bearer_auth("nope").send().unwrap();
    assert_eq!(wrong.status(), StatusCode::UNAUTHORIZED);
    assert_eq!(get(&base, "/api/runs?access_token=s3cret").0, StatusCode::OK);
}

#[test]
fn cors_allows_configured_origin() {
    let dir = tempfile::tempdir().unwrap();
    let base = start(config(dir.path()));
    let resp = Client::new()
        .request(reqwest::Method::OPTIONS, format!("{base}/api/runs"))
        .header("Origin", "http://localhost:5173")
        .header("Access-Control-Request-Method", "POST")
        .send()
        .unwrap();
    assert_eq!(resp.headers()["access-control-allow-origin"], "http://localhost:5173");
    let other = Client::new().get(format!("{base}/api/health")).header("Origin", "http://evil.example").send().unwrap();
    assert!(other.headers().get("access-control-allow-origin").is_none());
}

#[test]
fn registry_rebuilds_from_run_dirs() {
    let dir = tempfile::tempdir().unwrap();
    let run_id = {
        let base = start(config(dir.path()));
        let id = launch(&base, json!({"configs": ["context_cache"], "limit": 6}));
        wait_terminal(&base, &id);
        id
    };
    let state = AppState::new(config(dir.path()));
    let handles = state.registry.list();
    assert_eq!(handles.len(), 1);
    assert_eq!(handles[0].run_id, run_id);
    assert!(handles[0].summary.is_some());
    let entry = state.registry.get(&run_id).unwrap();
    assert_eq!(entry.events.len(), 2 * 6 + 1);

    // New ids continue after the rebuilt ones.
    let base = start(config(dir.path()));
    let next = launch(&base, json!({"configs": ["baseline"], "limit": 1}));
    assert_ne!(next, run_id);
    assert!(next > run_id);
}
