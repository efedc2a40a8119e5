use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::tensor::Precision;

/// Architecture of the backbone plus the prediction horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub block_size: usize,
    pub vocab_size: usize,
    /// Prediction horizon `K`; `K - 1` transition layers are allocated.
    pub horizon: usize,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default)]
    pub precision: Precision,
}

impl ModelConfig {
    /// Published configuration (6 layers, 6 heads, width 120).
    pub fn paper(block_size: usize, vocab_size: usize, horizon: usize) -> Self {
        ModelConfig { layers: 6, heads: 6, d_model: 120, block_size, vocab_size, horizon, dropout: 0.0, precision: Precision::F64 }
    }

    /// Desk-scale configuration (4 layers, 4 heads, width 64).
    pub fn desk(block_size: usize, vocab_size: usize, horizon: usize) -> Self {
        ModelConfig { layers: 4, heads: 4, d_model: 64, ..Self::paper(block_size, vocab_size, horizon) }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.layers == 0 || self.heads == 0 || self.d_model == 0 {
            return bad("layers, heads and d_model must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return bad(format!("d_model {} is not divisible by {} heads", self.d_model, self.heads));
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if self.block_size < 3 || self.vocab_size < 2 {
            return bad(format!("block_size {} / vocab_size {} too small", self.block_size, self.vocab_size));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Next-token prediction.
    Ntp,
    /// Multi-token prediction through transition layers and a shared head.
    Mtp,
    /// MTP plus latent consistency and semantic anchoring.
    Lse,
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Objective::Ntp => "ntp",
            Objective::Mtp => "mtp",
            Objective::Lse => "lse",
        })
    }
}

impl std::str::FromStr for Objective {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ntp" => Ok(Objective::Ntp),
            "mtp" => Ok(Objective::Mtp),
            "lse" | "lse-mtp" => Ok(Objective::Lse),
            other => Err(format!("unknown objective '{other}' (expected ntp, mtp or lse)")),
        }
    }
}

/// Which backbone state a projected state `ĥ_{n,k}` is pulled towards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentTarget {
    /// `h_{n+k-1}`: the state that predicts the same token under NTP.
    #[default]
    Aligned,
    /// `h_{n+k}`: one position later.
    Shifted,
}

/// How the per-row squared distance of the auxiliary losses is reduced over
/// the feature axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxReduction {
    /// Squared Euclidean distance `‖a − b‖²`.
    SumFeatures,
    /// Squared distance divided by the width (element-wise mean squared
    /// error).
    #[default]
    MeanFeatures,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iters: usize,
    pub batch: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub warmup: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub lambda_latent: f64,
    pub lambda_semantic: f64,
    pub objective: Objective,
    pub seed: u64,
    /// Save a checkpoint every this many iterations (0: only at the end).
    pub checkpoint_every: usize,
    pub detach_latent_target: bool,
    pub latent_target: LatentTarget,
    pub aux_reduction: AuxReduction,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iters: 4000,
            batch: 128,
            lr_max: 5e-4,
            lr_min: 5e-5,
            warmup: 1000,
            beta1: 0.9,
            beta2: 0.95,
            adam_eps: 1e-8,
            weight_decay: 0.1,
            grad_clip: 1.0,
            lambda_latent: 0.0,
            lambda_semantic: 0.0,
            objective: Objective::Ntp,
            seed: 0,
            checkpoint_every: 0,
            detach_latent_target: false,
            latent_target: LatentTarget::Aligned,
            aux_reduction: AuxReduction::MeanFeatures,
        }
    }
}

impl TrainConfig {
    /// Defaults for an objective: LSE gets `λ_l = λ_s = 0.1`.
    pub fn for_objective(objective: Objective) -> Self {
        let lambda = if objective == Objective::Lse { 0.1 } else { 0.0 };
        TrainConfig { objective, lambda_latent: lambda, lambda_semantic: lambda, ..Self::default() }
    }

    pub fn validate(&self, model: &ModelConfig) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.batch == 0 {
            return bad("batch must be positive".into());
        }
        match self.objective {
            Objective::Ntp if model.horizon != 1 => return bad(format!("ntp needs horizon 1, got {}", model.horizon)),
            Objective::Lse if model.horizon < 2 => return bad("lse needs horizon >= 2".into()),
            _ => {}
        }
        if self.objective != Objective::Lse && (self.lambda_latent != 0.0 || self.lambda_semantic != 0.0) {
            return bad(format!("λ weights must be 0 for {}", self.objective));
        }
        if self.lr_min > self.lr_max || self.lr_max <= 0.0 {
            return bad(format!("learning rates {} -> {} are not a decay", self.lr_max, self.lr_min));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)".into());
        }
        Ok(())
    }

    /// Learning rate at a 0-based iteration: linear warmup to `lr_max`, then
    /// cosine decay to `lr_min` at the final iteration.
    pub fn lr_at(&self, iter: usize) -> f64 {
        if iter < self.warmup {
            return self.lr_max * (iter + 1) as f64 / self.warmup as f64;
        }
        let span = self.iters.saturating_sub(self.warmup).max(1);
        let progress = ((iter - self.warmup) as f64 / span as f64).min(1.0);
        self.lr_min + 0.5 * (self.lr_max - self.lr_min) * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_warms_up_then_decays() {
        let c = TrainConfig { iters: 100, warmup: 10, ..TrainConfig::default() };
        assert!((c.lr_at(0) - 5e-5).abs() < 1e-15);
        assert!((c.lr_at(9) - 5e-4).abs() < 1e-15);
        assert!((c.lr_at(10) - 5e-4).abs() < 1e-15);
        assert!((c.lr_at(100) - 5e-5).abs() < 1e-15);
        assert!((c.lr_at(55) - 2.75e-4).abs() < 1e-12);
        for i in 10..100 {
            assert!(c.lr_at(i + 1) <= c.lr_at(i));
        }
    }

    #[test]
    fn objective_constraints_are_checked() {
        let m = ModelConfig::desk(16, 30, 1);
        assert!(TrainConfig::for_objective(Objective::Ntp).validate(&m).is_ok());
        assert!(TrainConfig::for_objective(Objective::Lse).validate(&m).is_err());
        let m4 = ModelConfig { horizon: 4, ..m };
        assert!(TrainConfig::for_objective(Objective::Ntp).validate(&m4).is_err());
        assert!(TrainConfig::for_objective(Objective::Lse).validate(&m4).is_ok());
        let mut mtp = TrainConfig::for_objective(Objective::Mtp);
        mtp.lambda_latent = 0.1;
        assert!(mtp.validate(&m4).is_err());
    }

    #[test]
    fn heads_must_divide_width() {
        let m = ModelConfig { heads: 5, ..ModelConfig::desk(16, 30, 1) };
        assert!(m.validate().is_err());
    }
}
