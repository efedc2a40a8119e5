//! Representation and legality probes over trained models.
//!
//! Geometry metrics read a [`HiddenDump`]: unit-normalized final-layer states
//! of sampled training trajectories, annotated with the ground-truth walk.
//! Legality metrics (`isp_probe`, `nav_eval`, `compression_distinction`)
//! additionally consult the graph.

mod contractivity;
mod distinction;
mod dump;
mod geometry;
mod isp;
mod nav;
mod pairs;
mod state_probe;

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ModelError;
use crate::rng;

pub use contractivity::{contractivity_pairs, contractivity_trace, ContractivityTrace, PairSet};
pub use distinction::{compression_distinction, DistinctionReport};
pub use dump::{annotate, build_dump, DumpMeta, DumpRecord, HiddenDump};
pub use geometry::{belief_compression, random_baseline, statewise_similarity, structure_gain, BeliefCondition, Equivalence, GainReport};
pub use isp::{future_action_map, isp_contexts, isp_probe, score_contexts, IspContext, IspReport};
pub use nav::{nav_eval, NavReport};
pub use pairs::{mine_pairs, Mined};
pub use state_probe::{current_state_probe, StateProbeReport};

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{metric}: no eligible {what}")]
    Starved { metric: &'static str, what: String },
    #[error("input mismatch: {0}")]
    Mismatch(String),
    #[error("format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<crate::tensor::TensorError> for ProbeError {
    fn from(e: crate::tensor::TensorError) -> Self {
        ProbeError::Model(e.into())
    }
}

/// One metric value with its sample count and bootstrap deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub metric: String,
    pub value: f64,
    pub n: usize,
    pub std: f64,
    /// Secondary values (components, requested vs. obtained counts, ...).
    #[serde(default)]
    pub extra: BTreeMap<String, f64>,
    /// Parameters the value depends on.
    #[serde(default)]
    pub config: BTreeMap<String, String>,
}

impl ProbeReport {
    pub fn new(metric: impl Into<String>, value: f64, n: usize, std: f64) -> Self {
        ProbeReport { metric: metric.into(), value, n, std, extra: BTreeMap::new(), config: BTreeMap::new() }
    }

    pub fn with_extra(mut self, key: &str, v: f64) -> Self {
        self.extra.insert(key.into(), v);
        self
    }

    pub fn with_config(mut self, key: &str, v: impl ToString) -> Self {
        self.config.insert(key.into(), v.to_string());
        self
    }
}

/// Writes reports as pretty JSON.
pub fn write_reports_json(path: &Path, reports: &[ProbeReport]) -> Result<(), ProbeError> {
    let text = serde_json::to_string_pretty(reports).map_err(|e| ProbeError::Format(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_reports_json(path: &Path) -> Result<Vec<ProbeReport>, ProbeError> {
    serde_json::from_str(&std::fs::read_to_string(path)?).map_err(|e| ProbeError::Format(e.to_string()))
}

/// Writes `metric,value,n,std` rows.
pub fn write_reports_csv(path: &Path, reports: &[ProbeReport]) -> Result<(), ProbeError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| ProbeError::Format(e.to_string()))?;
    w.write_record(["metric", "value", "n", "std"]).map_err(|e| ProbeError::Format(e.to_string()))?;
    for r in reports {
        w.write_record([r.metric.clone(), r.value.to_string(), r.n.to_string(), r.std.to_string()])
            .map_err(|e| ProbeError::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Number of bootstrap resamples behind every reported deviation.
pub const BOOTSTRAP_RESAMPLES: usize = 1000;

/// Bootstrap standard deviation of the mean of `xs`.
pub fn bootstrap_std(xs: &[f64], seed: u64, tag: &str) -> f64 {
    bootstrap_means(xs, seed, tag).map_or(0.0, |m| std_dev(&m))
}

fn bootstrap_means(xs: &[f64], seed: u64, tag: &str) -> Option<Vec<f64>> {
    if xs.len() < 2 {
        return None;
    }
    let mut r = rng::stream(seed, "probe/bootstrap", &[tag.len() as u64, rng::derive_seed(0, tag, &[])]);
    Some((0..BOOTSTRAP_RESAMPLES).map(|_| (0..xs.len()).map(|_| xs[r.random_range(0..xs.len())]).sum::<f64>() / xs.len() as f64).collect())
}

/// Bootstrap deviation of `mean(a) - mean(b)` with independent resamples.
pub fn bootstrap_std_diff(a: &[f64], b: &[f64], seed: u64, tag: &str) -> f64 {
    match (bootstrap_means(a, seed, &format!("{tag}/a")), bootstrap_means(b, seed, &format!("{tag}/b"))) {
        (Some(ma), Some(mb)) => std_dev(&ma.iter().zip(&mb).map(|(x, y)| x - y).collect::<Vec<_>>()),
        _ => 0.0,
    }
}

fn std_dev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}
