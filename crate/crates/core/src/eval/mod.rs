//! Metrics and the two experiment harnesses: subset ranking fidelity and
//! held-out response prediction.

pub mod metrics;
mod prediction;
mod ranking;

use std::fs;
use std::path::Path;

use serde::Serialize;

pub use metrics::{average_ranks, contamination_gamma, mean_std, roc_auc, spearman};
pub use prediction::{prediction_experiment, PredictionOptions, PredictionOutcome, PredictionReport};
pub use ranking::{
    estimated_accuracy, ranking_experiment, Estimator, Method, RankingOptions, RankingReport, ReplicaOutcome,
    SubsetResult,
};

use crate::error::{Error, Result};

/// One line of an aggregate table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StatRow {
    pub method: String,
    pub fraction_or_level: f64,
    pub mean: f64,
    pub std: f64,
    pub replicas: usize,
}

impl StatRow {
    pub(crate) fn from_values(method: &str, x: f64, values: &[f64]) -> Self {
        let (mean, std) = mean_std(values);
        StatRow {
            method: method.to_owned(),
            fraction_or_level: x,
            mean,
            std,
            replicas: values.len(),
        }
    }
}

/// Writes rows as CSV with a header line.
pub fn write_stat_csv(path: impl AsRef<Path>, rows: &[StatRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s).map_err(|e| Error::io(path, e))
}
