use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::forward::{register, Batch};
use super::loss::objective_loss;
use super::optim::{clip_global, AdamState};
use super::{Checkpoint, ModelBundle, ModelError, TrainConfig};
use crate::rng;
use crate::tensor::{Scalar, Tape};
use crate::trajgen::TrajectoryCorpus;

/// One line of the loss curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub iter: usize,
    pub total: f64,
    pub ce: f64,
    pub latent: f64,
    pub semantic: f64,
    pub lr: f64,
    pub grad_norm: f64,
    /// Wall-clock rate; kept out of `loss.csv` so the curve replays exactly.
    #[serde(skip)]
    pub tokens_per_sec: f64,
}

/// The batch drawn at `iter`: `batch` trajectories sampled uniformly with
/// replacement from a stream keyed by `(seed, iter)`.
pub fn sample_batch(corpus: &TrajectoryCorpus, batch: usize, seed: u64, iter: usize) -> Result<Batch, ModelError> {
    if corpus.train.is_empty() {
        return Err(ModelError::Config("corpus has no training trajectories".into()));
    }
    let mut r = rng::stream(seed, "train/batch", &[iter as u64]);
    let seqs: Vec<&[usize]> = (0..batch).map(|_| corpus.train[r.random_range(0..corpus.train.len())].tokens.as_slice()).collect();
    Batch::new(&seqs, corpus.vocab.pad())
}

/// Stateful optimizer loop over one corpus.
pub struct Trainer<'c, S> {
    bundle: ModelBundle<S>,
    cfg: TrainConfig,
    adam: AdamState<S>,
    iter: usize,
    corpus: &'c TrajectoryCorpus,
}

impl<'c, S: Scalar> Trainer<'c, S> {
    pub fn new(mut bundle: ModelBundle<S>, cfg: TrainConfig, corpus: &'c TrajectoryCorpus) -> Result<Self, ModelError> {
        cfg.validate(&bundle.config)?;
        if corpus.vocab != bundle.vocab {
            return Err(ModelError::Mismatch(format!(
                "corpus vocabulary ({} nodes) differs from the model's ({} nodes)",
                corpus.vocab.n, bundle.vocab.n
            )));
        }
        if corpus.block_size > bundle.config.block_size {
            return Err(ModelError::Mismatch(format!(
                "corpus block size {} exceeds model block size {}",
                corpus.block_size, bundle.config.block_size
            )));
        }
        bundle.provenance.graph_hash = corpus.graph_hash.clone();
        bundle.provenance.corpus_hash = corpus.content_hash();
        let adam = AdamState::new(bundle.params());
        Ok(Trainer { bundle, cfg, adam, iter: 0, corpus })
    }

    /// Continues from a checkpoint written with optimizer state.
    pub fn resume(ck: Checkpoint<S>, corpus: &'c TrajectoryCorpus) -> Result<Self, ModelError> {
        let cfg = ck.train.ok_or_else(|| ModelError::Checkpoint("checkpoint has no training config".into()))?;
        let adam = ck.adam.ok_or_else(|| ModelError::Checkpoint("checkpoint has no optimizer state".into()))?;
        let recorded = ck.bundle.provenance.corpus_hash.clone();
        let mut t = Trainer::new(ck.bundle, cfg, corpus)?;
        if !recorded.is_empty() && recorded != t.bundle.provenance.corpus_hash {
            return Err(ModelError::Mismatch("checkpoint was trained on a different corpus".into()));
        }
        t.adam = adam;
        t.iter = ck.iter;
        Ok(t)
    }

    pub fn iter(&self) -> usize {
        self.iter
    }

    pub fn bundle(&self) -> &ModelBundle<S> {
        &self.bundle
    }

    pub fn into_bundle(self) -> ModelBundle<S> {
        self.bundle
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn checkpoint(&self) -> Checkpoint<S> {
        Checkpoint {
            bundle: self.bundle.clone(),
            iter: self.iter,
            seed: self.cfg.seed,
            train: Some(self.cfg.clone()),
            adam: Some(self.adam.clone()),
        }
    }

    /// One optimizer step on the batch for the current iteration.
    pub fn step(&mut self) -> Result<CurveRow, ModelError> {
        let start = Instant::now();
        let batch = sample_batch(self.corpus, self.cfg.batch, self.cfg.seed, self.iter)?;
        let mut drop_rng = rng::stream(self.cfg.seed, "train/dropout", &[self.iter as u64]);
        let mut tape = Tape::new();
        let pv = register(&mut tape, &self.bundle, true);
        let parts = objective_loss(&mut tape, &self.bundle, &pv, &batch, &self.cfg, Some(&mut drop_rng))?;
        let total = tape.item(parts.total).as_f64();
        if !total.is_finite() {
            return Err(ModelError::NonFinite { iter: self.iter, origin: tape.nan_origin().unwrap_or("loss").to_string() });
        }
        let mut grads = tape.backward(parts.total)?;
        let mut gs: Vec<Option<Vec<S>>> = pv.iter().map(|&v| grads.take(v)).collect();
        let grad_norm = clip_global(&mut gs, self.cfg.grad_clip);
        if !grad_norm.is_finite() {
            return Err(ModelError::NonFinite { iter: self.iter, origin: "gradient".into() });
        }
        let lr = self.cfg.lr_at(self.iter);
        let specs = self.bundle.specs().to_vec();
        self.adam.update(self.bundle.params_mut(), &specs, &gs, lr, &self.cfg);
        let row = CurveRow {
            iter: self.iter,
            total,
            ce: tape.item(parts.ce).as_f64(),
            latent: parts.latent.map_or(0.0, |v| tape.item(v).as_f64()),
            semantic: parts.semantic.map_or(0.0, |v| tape.item(v).as_f64()),
            lr,
            grad_norm,
            tokens_per_sec: (batch.rows * batch.len) as f64 / start.elapsed().as_secs_f64().max(1e-9),
        };
        self.iter += 1;
        Ok(row)
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Where checkpoints and `loss.csv` go; nothing is written when `None`.
    pub out_dir: Option<PathBuf>,
    /// Stop before this iteration instead of `cfg.iters` (simulates an
    /// interrupted run).
    pub stop_at: Option<usize>,
    /// Log progress every this many iterations (0: never).
    pub log_every: usize,
}

pub struct TrainOutcome<S> {
    pub bundle: ModelBundle<S>,
    pub curve: Vec<CurveRow>,
    /// `(iteration, directory)` of every checkpoint written, in order.
    pub checkpoints: Vec<(usize, PathBuf)>,
}

pub fn checkpoint_dir(out: &Path, iter: usize) -> PathBuf {
    out.join(format!("ckpt-{iter:06}"))
}

fn append_curve(path: &Path, rows: &[CurveRow]) -> Result<(), ModelError> {
    let exists = path.exists();
    let file = fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(!exists).from_writer(file);
    for r in rows {
        w.serialize(r).map_err(|e| ModelError::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Runs `trainer` to `cfg.iters` (or `opts.stop_at`), checkpointing at
/// iteration 0, every `cfg.checkpoint_every` iterations, and at the end.
pub fn run<S: Scalar>(mut trainer: Trainer<'_, S>, opts: &TrainOptions) -> Result<TrainOutcome<S>, ModelError> {
    let end = opts.stop_at.unwrap_or(trainer.cfg.iters).min(trainer.cfg.iters);
    let every = trainer.cfg.checkpoint_every;
    let mut checkpoints = Vec::new();
    let save = |t: &Trainer<'_, S>, cps: &mut Vec<(usize, PathBuf)>| -> Result<(), ModelError> {
        if let Some(out) = &opts.out_dir {
            let dir = checkpoint_dir(out, t.iter);
            t.checkpoint().save(&dir)?;
            cps.push((t.iter, dir));
        }
        Ok(())
    };
    if trainer.iter == 0 && every > 0 {
        save(&trainer, &mut checkpoints)?;
    }
    let mut curve = Vec::new();
    while trainer.iter < end {
        let row = trainer.step()?;
        if opts.log_every > 0 && (row.iter % opts.log_every == 0 || trainer.iter == end) {
            log::info!(
                "{} iter {:>5} loss {:.4} ce {:.4} latent {:.4} semantic {:.4} lr {:.2e} |g| {:.3} {:.0} tok/s",
                trainer.cfg.objective,
                row.iter,
                row.total,
                row.ce,
                row.latent,
                row.semantic,
                row.lr,
                row.grad_norm,
                row.tokens_per_sec
            );
        }
        curve.push(row);
        let at_cadence = every > 0 && trainer.iter.is_multiple_of(every);
        if at_cadence || trainer.iter == end {
            save(&trainer, &mut checkpoints)?;
        }
    }
    if let Some(out) = &opts.out_dir {
        fs::create_dir_all(out)?;
        append_curve(&out.join("loss.csv"), &curve)?;
    }
    Ok(TrainOutcome { bundle: trainer.into_bundle(), curve, checkpoints })
}

/// Trains a fresh bundle from scratch.
pub fn train<S: Scalar>(
    bundle: ModelBundle<S>,
    corpus: &TrajectoryCorpus,
    cfg: TrainConfig,
    opts: &TrainOptions,
) -> Result<TrainOutcome<S>, ModelError> {
    run(Trainer::new(bundle, cfg, corpus)?, opts)
}
