mod common;

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use axum::extract::{Path, Query};
use axum::http::{HeaderMap, StatusCode};
use axum::routing::get;
use axum::{Json, Router};
use common::serve;
use discharge_core::ingest::{BundleSource, FhirClient, FhirClientConfig, IngestError, ResourceKind};
use serde_json::{json, Value};

fn obs(id: u32) -> Value {
    json!({"fullUrl": format!("urn:o{id}"), "resource": {
        "resourceType": "Observation", "id": format!("o{id}"), "status": "final",
        "subject": {"reference": "Patient/p1"}, "code": {"text": format!("Obs {id}")},
        "effectiveDateTime": format!("2024-01-0{id}T00:00:00Z")}})
}

fn searchset(entries: Vec<Value>, next: Option<String>) -> Value {
    let mut b = json!({"resourceType": "Bundle", "type": "searchset", "entry": entries});
    if let Some(n) = next {
        b["link"] = json!([{"relation": "self", "url": "x"}, {"relation": "next", "url": n}]);
    }
    b
}

async fn patient(Path(id): Path<String>) -> Result<Json<Value>, StatusCode> {
    match id.as_str() {
        "p1" | "broken" => Ok(Json(json!({"resourceType": "Patient", "id": id, "gender": "female"}))),
        _ => Err(StatusCode::NOT_FOUND),
    }
}

async fn search(Path(kind): Path<String>, Query(q): Query<HashMap<String, String>>) -> (StatusCode, Json<Value>) {
    let pid = q.get("patient").cloned().unwrap_or_default();
    if pid == "broken" && kind == "Condition" {
        return (StatusCode::INTERNAL_SERVER_ERROR, Json(json!({"issue": "boom"})));
    }
    if kind == "Observation" && pid == "p1" {
        return match q.get("page").map(String::as_str) {
            None => (StatusCode::OK, Json(searchset((1..=3).map(obs).collect(), Some("Observation?patient=p1&page=2".into())))),
            _ => (StatusCode::OK, Json(searchset((4..=5).map(obs).collect(), None))),
        };
    }
    (StatusCode::OK, Json(searchset(vec![], None)))
}

fn fhir_server() -> String {
    serve(Router::new().route("/Patient/{id}", get(patient)).route("/{kind}", get(search)))
}

#[test]
fn follows_next_links_across_pages() {
    let client = FhirClient::new(FhirClientConfig::new(fhir_server())).unwrap();
    let bundle = client.fetch_patient_bundle("p1").unwrap();
    assert_eq!(bundle.source, BundleSource::RestServer);
    let ids: Vec<_> = bundle.observations.iter().map(|r| r.id.as_str()).collect();
    assert_eq!(ids, ["o1", "o2", "o3", "o4", "o5"]);
    assert!(bundle.conditions.is_empty());
}

#[test]
fn server_errors_and_missing_patients_surface() {
    let client = FhirClient::new(FhirClientConfig::new(fhir_server())).unwrap();
    match client.fetch_patient_bundle("broken") {
        Err(IngestError::Http { status, body }) => {
            assert_eq!(status, 500);
            assert!(body.contains("boom"));
        }
        other => panic!("expected Http error, got {other:?}"),
    }
    assert!(matches!(client.fetch_patient_bundle("ghost"), Err(IngestError::NotFound(id)) if id == "ghost"));
}

#[test]
fn page_cap_bounds_endless_paging() {
    let hits = Arc::new(AtomicUsize::new(0));
    let h = hits.clone();
    let router = Router::new().route(
        "/Observation",
        get(move || {
            let h = h.clone();
            async move {
                let n = h.fetch_add(1, Ordering::SeqCst) as u32;
                Json(searchset(vec![obs(n % 9 + 1)], Some(format!("Observation?page={}", n + 1))))
            }
        }),
    );
    let mut cfg = FhirClientConfig::new(serve(router));
    cfg.page_cap = 4;
    let client = FhirClient::new(cfg).unwrap();
    let found = client.search(ResourceKind::Observation, &[]).unwrap();
    assert_eq!(found.len(), 4);
    assert_eq!(hits.load(Ordering::SeqCst), 4);
}

#[test]
fn bearer_token_is_sent() {
    let router = Router::new().route(
        "/Patient",
        get(|headers: HeaderMap| async move {
            let ok = headers.get("authorization").and_then(|v| v.to_str().ok()) == Some("Bearer s3cret");
            if ok {
                (StatusCode::OK, Json(searchset(vec![json!({"resource": {"resourceType": "Patient", "id": "a"}})], None)))
            } else {
                (StatusCode::UNAUTHORIZED, Json(json!({})))
            }
        }),
    );
    let base = serve(router);
    let mut cfg = FhirClientConfig::new(base.clone());
    cfg.bearer_token = Some("s3cret".into());
    assert_eq!(FhirClient::new(cfg).unwrap().list_patient_ids(10).unwrap(), ["a"]);
    let anon = FhirClient::new(FhirClientConfig::new(base)).unwrap();
    assert!(matches!(anon.list_patient_ids(10), Err(IngestError::Http { status: 401, .. })));
}

#[test]
fn unreachable_server_is_a_transport_error() {
    let client = FhirClient::new(FhirClientConfig::new("http://127.0.0.1:9/")).unwrap();
    assert!(matches!(client.read_patient("p1"), Err(IngestError::Transport(_) | IngestError::Timeout(_))));
}
