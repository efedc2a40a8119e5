//! Causal Transformer with horizon-specific transition layers and a shared
//! output head, the NTP / MTP / LSE-MTP objectives, AdamW training and greedy
//! decoding.
//!
//! Position `p` of a sequence has consumed `tokens[..=p]`. Its final-layer
//! state `h_p` predicts `tokens[p + 1]` through the head; for `k >= 2` the
//! projected state `ĥ_{p,k} = T^(k-1)(h_p)` predicts `tokens[p + k]` through
//! the same head. Only increment tokens are ever targets.

mod bench;
mod bundle;
mod config;
mod forward;
mod generate;
mod loss;
mod optim;
mod train;

use thiserror::Error;

use crate::tensor::TensorError;

pub use bench::{bench_objectives, BenchResult, BenchSpec};
pub use bundle::{manifest_file, param_schedule, Checkpoint, CheckpointManifest, ModelBundle, ParamEntry, ParamSpec, Provenance};
pub use config::{AuxReduction, LatentTarget, ModelConfig, Objective, TrainConfig};
pub use forward::{backbone, head, project, register, Backbone, Batch, ForwardOutput, HorizonRows};
pub use generate::{generate, generate_many, GenerateOptions, Rollout};
pub use loss::{loss_lse, loss_mtp, loss_ntp, objective_grad_check, objective_loss, objective_loss_anchored, LatentTerm, LossParts};
pub use optim::{clip_global, global_norm, AdamState};
pub use train::{checkpoint_dir, run, sample_batch, train, CurveRow, TrainOptions, TrainOutcome, Trainer};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("non-finite value at iteration {iter} (first produced by {origin})")]
    NonFinite { iter: usize, origin: String },
    #[error("input mismatch: {0}")]
    Mismatch(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
