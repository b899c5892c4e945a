use std::time::Duration;

use reqwest::blocking::{Client, Response};
use reqwest::Url;
use serde_json::Value;
use tracing::{debug, warn};

use super::{assemble_bundles, bundle_entries, BundleSource, FhirResource, IngestError, PatientBundle, ResourceKind};

/// Maximum number of `next` links followed for one search.
pub const DEFAULT_PAGE_CAP: usize = 100;

#[derive(Debug, Clone)]
pub struct FhirClientConfig {
    pub base_url: String,
    pub timeout: Duration,
    pub page_cap: usize,
    pub page_size: u32,
    pub bearer_token: Option<String>,
}

impl FhirClientConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            timeout: Duration::from_secs(30),
            page_cap: DEFAULT_PAGE_CAP,
            page_size: 100,
            bearer_token: None,
        }
    }
}

/// Read-only FHIR R4 REST client for the supported resource subset.
#[derive(Debug, Clone)]
pub struct FhirClient {
    base: Url,
    cfg: FhirClientConfig,
    http: Client,
}

const EXCERPT_LEN: usize = 512;

impl FhirClient {
    pub fn new(cfg: FhirClientConfig) -> Result<Self, IngestError> {
        let mut base = cfg.base_url.clone();
        if !base.ends_with('/') {
            base.push('/');
        }
        let base = Url::parse(&base)
            .map_err(|e| IngestError::Transport(format!("invalid base URL {}: {e}", cfg.base_url)))?;
        let http = Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| IngestError::Transport(e.to_string()))?;
        Ok(Self { base, cfg, http })
    }

    pub fn base_url(&self) -> &str {
        self.base.as_str()
    }

    fn get(&self, url: Url) -> Result<Response, IngestError> {
        debug!(%url, "FHIR GET");
        let mut req = self.http.get(url).header("Accept", "application/fhir+json");
        if let Some(token) = &self.cfg.bearer_token {
            req = req.bearer_auth(token);
        }
        req.send().map_err(|e| self.map_transport(e))
    }

    fn map_transport(&self, e: reqwest::Error) -> IngestError {
        if e.is_timeout() {
            IngestError::Timeout(self.cfg.timeout)
        } else {
            IngestError::Transport(e.to_string())
        }
    }

    fn json(&self, resp: Response) -> Result<Value, IngestError> {
        let status = resp.status();
        let body = resp.text().map_err(|e| self.map_transport(e))?;
        if !status.is_success() {
            let body: String = body.chars().take(EXCERPT_LEN).collect();
            return Err(IngestError::Http { status: status.as_u16(), body });
        }
        serde_json::from_str(&body).map_err(|e| IngestError::MalformedResource(format!("response body: {e}")))
    }

    fn join(&self, path: &str) -> Result<Url, IngestError> {
        self.base.join(path).map_err(|e| IngestError::Transport(e.to_string()))
    }

    pub fn read_patient(&self, patient_id: &str) -> Result<FhirResource, IngestError> {
        let resp = self.get(self.join(&format!("Patient/{patient_id}"))?)?;
        if matches!(resp.status().as_u16(), 404 | 410) {
            return Err(IngestError::NotFound(patient_id.to_string()));
        }
        let value = self.json(resp)?;
        let raw = serde_json::to_string(&value).unwrap_or_default();
        super::resource::from_value(&value, raw)
    }

    /// Runs a search and follows `next` links up to the page cap.
    pub fn search(&self, kind: ResourceKind, params: &[(&str, &str)]) -> Result<Vec<FhirResource>, IngestError> {
        let mut url = self.join(kind.as_str())?;
        {
            let mut q = url.query_pairs_mut();
            for (k, v) in params {
                q.append_pair(k, v);
            }
            q.append_pair("_count", &self.cfg.page_size.to_string());
        }
        let mut out = Vec::new();
        let mut pages = 0;
        let mut next = Some(url);
        while let Some(url) = next.take() {
            if pages == self.cfg.page_cap {
                warn!(kind = %kind, cap = self.cfg.page_cap, "page cap reached, stopping search");
                break;
            }
            pages += 1;
            let page = self.json(self.get(url)?)?;
            let (resources, problems) = bundle_entries(&page);
            for p in problems {
                debug!(kind = %kind, "skipped search entry: {p}");
            }
            out.extend(resources.into_iter().filter(|r| r.kind == kind));
            next = next_link(&page).map(|href| self.base.join(href)).transpose()
                .map_err(|e| IngestError::Transport(e.to_string()))?;
        }
        Ok(out)
    }

    /// Fetches the patient and every supported resource referencing it,
    /// one search per resource kind, issued concurrently.
    pub fn fetch_patient_bundle(&self, patient_id: &str) -> Result<PatientBundle, IngestError> {
        if patient_id.trim().is_empty() {
            return Err(IngestError::NotFound(String::new()));
        }
        let patient = self.read_patient(patient_id)?;
        let kinds = &ResourceKind::ALL[1..];
        let results: Vec<Result<Vec<FhirResource>, IngestError>> = std::thread::scope(|s| {
            let handles: Vec<_> = kinds
                .iter()
                .map(|&kind| s.spawn(move || self.search(kind, &[("patient", patient_id)])))
                .collect();
            handles.into_iter().map(|h| h.join().expect("search thread panicked")).collect()
        });
        let mut resources = vec![patient];
        for r in results {
            resources.extend(r?);
        }
        let report = assemble_bundles(resources);
        for w in &report.warnings {
            debug!(patient_id, "{w}");
        }
        let mut bundle = report
            .bundles
            .into_iter()
            .find(|b| b.patient_id == patient_id)
            .ok_or_else(|| IngestError::NotFound(patient_id.to_string()))?;
        bundle.source = BundleSource::RestServer;
        Ok(bundle)
    }

    /// Lists patient ids in server order, up to `limit`.
    pub fn list_patient_ids(&self, limit: usize) -> Result<Vec<String>, IngestError> {
        let mut ids: Vec<String> = self
            .search(ResourceKind::Patient, &[])?
            .into_iter()
            .map(|r| r.id)
            .collect();
        ids.truncate(limit);
        Ok(ids)
    }
}

fn next_link(bundle: &Value) -> Option<&str> {
    bundle
        .get("link")?
        .as_array()?
        .iter()
        .find(|l| l.get("relation").and_then(Value::as_str) == Some("next"))?
        .get("url")?
        .as_str()
}
