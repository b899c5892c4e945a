use std::collections::BTreeMap;

use crate::ingest::{
    assemble_bundles, filter_active, load_ndjson, ActiveFilterPolicy, FhirClient, FhirClientConfig, IngestError,
    PatientBundle,
};
use crate::snapshot::{is_eligible, summarize};

#[derive(Debug, Clone)]
enum Source {
    Bundles(BTreeMap<String, PatientBundle>),
    Rest(FhirClient),
}

/// Ordered patient ids plus the means to fetch each patient's bundle.
#[derive(Debug, Clone)]
pub struct Cohort {
    source: Source,
    patient_ids: Vec<String>,
}

impl Cohort {
    /// The first `limit` eligible patients in bundle (patient id) order.
    pub fn from_bundles(bundles: Vec<PatientBundle>, limit: usize, policy: &ActiveFilterPolicy) -> Self {
        let patient_ids = bundles
            .iter()
            .filter(|b| is_eligible(&summarize(&filter_active(b, policy))))
            .take(limit)
            .map(|b| b.patient_id.clone())
            .collect();
        let map = bundles.into_iter().map(|b| (b.patient_id.clone(), b)).collect();
        Self { source: Source::Bundles(map), patient_ids }
    }

    /// Exactly these bundles, in the given order, eligible or not.
    pub fn from_bundles_unfiltered(bundles: Vec<PatientBundle>) -> Self {
        let patient_ids = bundles.iter().map(|b| b.patient_id.clone()).collect();
        let map = bundles.into_iter().map(|b| (b.patient_id.clone(), b)).collect();
        Self { source: Source::Bundles(map), patient_ids }
    }

    /// Patients fetched on demand; eligibility is decided per episode.
    pub fn from_rest(client: FhirClient, patient_ids: Vec<String>) -> Self {
        Self { source: Source::Rest(client), patient_ids }
    }

    /// Resolves `spec` as a FHIR server base URL (`http://`, `https://`) or
    /// an NDJSON/Bundle file or directory. Unparseable lines are logged and
    /// skipped.
    pub fn resolve(spec: &str, limit: usize, policy: &ActiveFilterPolicy) -> Result<Self, IngestError> {
        if spec.starts_with("http://") || spec.starts_with("https://") {
            let client = FhirClient::new(FhirClientConfig::new(spec))?;
            let ids = client.list_patient_ids(limit)?;
            return Ok(Self::from_rest(client, ids));
        }
        let report = load_ndjson(spec)?;
        for w in &report.warnings {
            tracing::warn!(location = %w.location, "skipped input: {}", w.message);
        }
        let assembled = assemble_bundles(report.resources);
        for w in &assembled.warnings {
            tracing::warn!(location = %w.location, "skipped resource: {}", w.message);
        }
        Ok(Self::from_bundles(assembled.bundles, limit, policy))
    }

    pub fn patient_ids(&self) -> &[String] {
        &self.patient_ids
    }

    pub fn len(&self) -> usize {
        self.patient_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patient_ids.is_empty()
    }

    pub fn truncated(&self, limit: usize) -> Self {
        let mut c = self.clone();
        c.patient_ids.truncate(limit);
        c
    }

    pub fn fetch(&self, patient_id: &str) -> Result<PatientBundle, IngestError> {
        match &self.source {
            Source::Bundles(map) => {
                map.get(patient_id).cloned().ok_or_else(|| IngestError::NotFound(patient_id.to_string()))
            }
            Source::Rest(client) => client.fetch_patient_bundle(patient_id),
        }
    }
}
