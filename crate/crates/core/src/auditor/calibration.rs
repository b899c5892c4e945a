//! Brier score and expected calibration error over (confidence, outcome) pairs.
//!
//! The outcome is the coverage gate: 1 when a plan contains all four
//! mandatory categories. ECE uses `B` equal-width bins `((b-1)/B, b/B]` with
//! `p = 0` in the first bin, and compares each bin's accuracy with the bin
//! center `(b - 0.5) / B`.

use serde::{Deserialize, Serialize};

use super::AuditError;

pub const DEFAULT_BIN_COUNT: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub p: f64,
    pub y: bool,
}

impl CalibrationRecord {
    pub fn new(p: f64, y: bool) -> Self {
        Self { p: p.clamp(0.0, 1.0), y }
    }

    fn outcome(&self) -> f64 {
        if self.y {
            1.0
        } else {
            0.0
        }
    }
}

pub fn brier(records: &[CalibrationRecord]) -> Result<f64, AuditError> {
    if records.is_empty() {
        return Err(AuditError::EmptyRecords);
    }
    let sum: f64 = records.iter().map(|r| (r.p - r.outcome()).powi(2)).sum();
    Ok(sum / records.len() as f64)
}

/// 1-based bin of confidence `p` among `bins` bins.
pub fn bin_of(p: f64, bins: usize) -> usize {
    let b = bins as f64;
    // Start from the arithmetic estimate, then settle boundaries using the
    // same `(k-1)/B < p <= k/B` comparisons that define the bins.
    let mut k = ((p * b).ceil() as usize).clamp(1, bins);
    while k > 1 && p <= (k - 1) as f64 / b {
        k -= 1;
    }
    while k < bins && p > k as f64 / b {
        k += 1;
    }
    k
}

#[derive(Debug, Clone, Copy, Default)]
struct Bin {
    n: usize,
    hits: f64,
    conf_sum: f64,
}

fn binned(records: &[CalibrationRecord], bins: usize) -> Result<Vec<Bin>, AuditError> {
    if records.is_empty() {
        return Err(AuditError::EmptyRecords);
    }
    if bins == 0 {
        return Err(AuditError::InvalidBinCount);
    }
    let mut out = vec![Bin::default(); bins];
    for r in records {
        let bin = &mut out[bin_of(r.p, bins) - 1];
        bin.n += 1;
        bin.hits += r.outcome();
        bin.conf_sum += r.p;
    }
    Ok(out)
}

/// ECE against bin centers.
pub fn ece(records: &[CalibrationRecord], bins: usize) -> Result<f64, AuditError> {
    let n = records.len() as f64;
    Ok(binned(records, bins)?
        .iter()
        .enumerate()
        .filter(|(_, bin)| bin.n > 0)
        .map(|(i, bin)| {
            let center = (i as f64 + 0.5) / bins as f64;
            (bin.n as f64 / n) * (bin.hits / bin.n as f64 - center).abs()
        })
        .sum())
}

/// ECE against each bin's mean confidence; reported as a diagnostic.
pub fn ece_mean_confidence(records: &[CalibrationRecord], bins: usize) -> Result<f64, AuditError> {
    let n = records.len() as f64;
    Ok(binned(records, bins)?
        .iter()
        .filter(|bin| bin.n > 0)
        .map(|bin| {
            let k = bin.n as f64;
            (k / n) * (bin.hits / k - bin.conf_sum / k).abs()
        })
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationAccumulator {
    records: Vec<CalibrationRecord>,
    bin_count: usize,
}

impl Default for CalibrationAccumulator {
    fn default() -> Self {
        Self::new(DEFAULT_BIN_COUNT)
    }
}

impl CalibrationAccumulator {
    pub fn new(bin_count: usize) -> Self {
        Self { records: Vec::new(), bin_count: bin_count.max(1) }
    }

    pub fn push(&mut self, record: CalibrationRecord) {
        self.records.push(record);
    }

    pub fn records(&self) -> &[CalibrationRecord] {
        &self.records
    }

    pub fn bin_count(&self) -> usize {
        self.bin_count
    }

    pub fn brier(&self) -> Result<f64, AuditError> {
        brier(&self.records)
    }

    pub fn ece(&self) -> Result<f64, AuditError> {
        ece(&self.records, self.bin_count)
    }
}
