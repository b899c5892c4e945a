mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use common::*;
use discharge_core::clock::WallClock;
use discharge_core::planner::{
    BackendError, ContextCache, HttpBackend, HttpBackendConfig, Planner, PlannerConfig,
};
use discharge_core::snapshot::summarize;
use serde_json::{json, Value};

const PLAN: &str = r#"Here is the plan:
```json
{"actions":[
 {"type":"follow_up","details":"PCP visit","deadline_hours":72},
 {"type":"Medication Review","details":"Reconcile home meds","deadline_hours":24},
 {"type":"education","details":"Inhaler technique","deadline_hours":24},
 {"type":"symptom_monitoring","details":"Daily peak flow","deadline_hours":168}],
 "confidence":0.91}
```"#;

/// Returns `fail_first` copies of `status`, then OpenAI-shaped completions.
fn llm(status: StatusCode, fail_first: usize, seen: Arc<Mutex<Vec<Value>>>) -> (String, Arc<AtomicUsize>) {
    let hits = Arc::new(AtomicUsize::new(0));
    let h = hits.clone();
    let router = Router::new().route(
        "/v1/chat",
        post(move |Json(body): Json<Value>| {
            let h = h.clone();
            let seen = seen.clone();
            async move {
                seen.lock().unwrap().push(body);
                if h.fetch_add(1, Ordering::SeqCst) < fail_first {
                    return (status, Json(json!({"error": "nope"})));
                }
                (StatusCode::OK, Json(json!({"choices": [{"message": {"role": "assistant", "content": PLAN}}]})))
            }
        }),
    );
    (format!("{}v1/chat", serve(router)), hits)
}

fn config(url: String) -> HttpBackendConfig {
    let mut cfg = HttpBackendConfig::new(url);
    cfg.backoff_base = Duration::from_millis(5);
    cfg.api_key = Some("k".into());
    cfg
}

fn planner(backend: HttpBackend) -> Planner {
    Planner {
        backend: Arc::new(backend),
        index: Arc::new(index()),
        cache: Arc::new(ContextCache::new()),
        clock: Arc::new(WallClock::new()),
    }
}

#[test]
fn plans_from_a_chat_endpoint() {
    let seen = Arc::new(Mutex::new(Vec::new()));
    let (url, hits) = llm(StatusCode::OK, 0, seen.clone());
    let p = planner(HttpBackend::new(config(url)).unwrap());
    let snap = summarize(&bundles("two_patients")[0]);
    let out = p.plan_episode(&snap, "0001-tp001", &PlannerConfig::default()).unwrap();
    assert_eq!(hits.load(Ordering::SeqCst), 1);
    assert_eq!(out.plan.actions.len(), 4);
    assert_eq!(out.plan.confidence, 0.91);
    assert_eq!(out.plan.backend_id, "http:gpt-4o-mini");
    let body = &seen.lock().unwrap()[0];
    assert_eq!(body["messages"][0]["role"], "system");
    let user = body["messages"][1]["content"].as_str().unwrap();
    assert!(user.contains(&snap.text_summary));
}

#[test]
fn retries_rate_limits_then_succeeds() {
    let (url, hits) = llm(StatusCode::TOO_MANY_REQUESTS, 2, Default::default());
    let b = HttpBackend::new(config(url)).unwrap();
    let p = planner(b);
    let snap = summarize(&bundles("two_patients")[0]);
    assert!(p.plan_episode(&snap, "e", &PlannerConfig::default()).is_ok());
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[test]
fn gives_up_after_retry_budget() {
    let (url, hits) = llm(StatusCode::SERVICE_UNAVAILABLE, 10, Default::default());
    let p = planner(HttpBackend::new(config(url)).unwrap());
    let snap = summarize(&bundles("two_patients")[0]);
    let err = p.backend.generate(&discharge_core::planner::build_context(&snap, &p.index, &p.cache, false, 3).context);
    assert!(matches!(err, Err(BackendError::Failed { attempts: 3, .. })), "{err:?}");
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[test]
fn auth_failures_are_not_retried() {
    let (url, hits) = llm(StatusCode::UNAUTHORIZED, 10, Default::default());
    let p = planner(HttpBackend::new(config(url)).unwrap());
    let snap = summarize(&bundles("two_patients")[0]);
    let ctx = discharge_core::planner::build_context(&snap, &p.index, &p.cache, false, 3).context;
    assert!(matches!(p.backend.generate(&ctx), Err(BackendError::Auth(401))));
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}
