use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::train::sample_batch;
use super::{ModelBundle, ModelConfig, ModelError, Objective, TrainConfig, Trainer};
use crate::tensor::Scalar;
use crate::trajgen::TrajectoryCorpus;

/// One objective to time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSpec {
    pub objective: Objective,
    pub horizon: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub objective: Objective,
    pub horizon: usize,
    /// Best tokens/sec over the repeats.
    pub tokens_per_sec: f64,
    pub repeats: Vec<f64>,
    pub steps_per_repeat: usize,
}

/// Training throughput of each spec on the same corpus and batches. Repeats
/// are interleaved across specs so drift in machine load hits all of them
/// alike, and the best repeat is reported.
pub fn bench_objectives<S: Scalar>(
    base: &ModelConfig,
    train: &TrainConfig,
    corpus: &TrajectoryCorpus,
    specs: &[BenchSpec],
    steps: usize,
    repeats: usize,
) -> Result<Vec<BenchResult>, ModelError> {
    let mut trainers = Vec::new();
    for (i, s) in specs.iter().enumerate() {
        let cfg = ModelConfig { horizon: s.horizon, ..base.clone() };
        let bundle = ModelBundle::<S>::init(cfg, corpus.vocab, train.seed.wrapping_add(i as u64))?;
        let lambda = if s.objective == Objective::Lse { 0.1 } else { 0.0 };
        let tc = TrainConfig { objective: s.objective, lambda_latent: lambda, lambda_semantic: lambda, ..train.clone() };
        let mut t = Trainer::new(bundle, tc, corpus)?;
        t.step()?; // warm caches and allocator
        trainers.push(t);
    }
    let tokens: usize =
        (0..steps).map(|it| sample_batch(corpus, train.batch, train.seed, it + 1).map(|b| b.rows * b.len)).sum::<Result<usize, _>>()?;
    let mut times = vec![Vec::new(); specs.len()];
    for _ in 0..repeats.max(1) {
        for (i, t) in trainers.iter_mut().enumerate() {
            // every spec replays the same batch sequence
            let ck = t.checkpoint();
            let start = Instant::now();
            for _ in 0..steps {
                t.step()?;
            }
            times[i].push(tokens as f64 / start.elapsed().as_secs_f64());
            *t = Trainer::resume(ck, corpus)?;
        }
    }
    Ok(specs
        .iter()
        .zip(times)
        .map(|(s, r)| BenchResult {
            objective: s.objective,
            horizon: s.horizon,
            tokens_per_sec: r.iter().copied().fold(0.0, f64::max),
            repeats: r,
            steps_per_repeat: steps,
        })
        .collect())
}
