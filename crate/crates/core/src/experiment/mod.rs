//! End-to-end experiments: worlds per replicate, every objective variant
//! trained on the same corpus, the probe suite on each, and the joined
//! tables.
//!
//! Output layout under a root directory:
//!
//! ```text
//! <graph>-s<rep>/graph.json
//! <graph>-s<rep>/corpus.jsonl (+ corpus.manifest.json)
//! <graph>-s<rep>/<variant>/ckpt-*/, loss.csv, probes.json, timing.json
//! report/structure_gain.csv, belief.csv, isp.csv, navigation.csv, ..., acceptance.csv, summary.txt
//! ```

mod config;
mod pipeline;
mod reference;
mod report;

use std::path::PathBuf;

use thiserror::Error;

pub use config::{CorpusSpec, GraphSpec, ModelSpec, Preset, ProbeSpec, RunConfig, TrainSpec, VariantSpec};
pub use pipeline::{
    prepare_world, probe_context, probe_suite, run_experiment, run_variant, world_dir, ProbeContext, RunOptions, VariantProbes, World,
    PROBES_FILE,
};
pub use reference::{published_belief, published_gain, published_isp, published_nav};
pub use report::{evaluate_criteria, load_results, write_report, Aggregate, CriterionResult, ReportSummary};

use crate::graphgen::GraphError;
use crate::linlab::LinlabError;
use crate::model::ModelError;
use crate::probes::ProbeError;
use crate::trajgen::TrajError;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("missing input: {}", .0.display())]
    MissingInput(PathBuf),
    #[error("hash mismatch: {0}")]
    HashMismatch(String),
    #[error("invariant failed: {0}")]
    Invariant(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Corpus(#[from] TrajError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Linlab(#[from] LinlabError),
    #[error("format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ExperimentError {
    /// Process exit status for the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::MissingInput(_) => 3,
            ExperimentError::HashMismatch(_) => 4,
            ExperimentError::Config(_) => 5,
            ExperimentError::Invariant(_) => 6,
            _ => 1,
        }
    }
}
