use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{AdamState, ModelConfig, ModelError, TrainConfig};
use crate::rng;
use crate::tensor::{Precision, Scalar, Tensor};
use crate::trajgen::Vocabulary;

/// Parameters per Transformer block, in schedule order.
pub(crate) const BLOCK_PARAMS: [&str; 12] = [
    "ln1.gamma",
    "ln1.beta",
    "attn.w_qkv",
    "attn.b_qkv",
    "attn.w_proj",
    "attn.b_proj",
    "ln2.gamma",
    "ln2.beta",
    "mlp.w_fc",
    "mlp.b_fc",
    "mlp.w_proj",
    "mlp.b_proj",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Normal,
    Residual,
    Ones,
    Zeros,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    /// Receives decoupled weight decay (weight matrices only).
    pub decay: bool,
}

/// Fixed parameter order:
///
/// 1. `tok_emb [V, d]`, `pos_emb [block, d]`
/// 2. for each block `l`: `h{l}.` + each name in block order
///    (`ln1.gamma`, `ln1.beta`, `attn.w_qkv [d, 3d]`, `attn.b_qkv`,
///    `attn.w_proj [d, d]`, `attn.b_proj`, `ln2.gamma`, `ln2.beta`,
///    `mlp.w_fc [d, 4d]`, `mlp.b_fc`, `mlp.w_proj [4d, d]`, `mlp.b_proj`)
/// 3. `ln_f.gamma`, `ln_f.beta`, `head [d, V]`
/// 4. for `k` in `2..=K`: `trans{k}.w [d, d]`, `trans{k}.b [d]`
pub fn param_schedule(cfg: &ModelConfig) -> Vec<ParamSpec> {
    schedule_with_init(cfg).into_iter().map(|(s, _)| s).collect()
}

fn schedule_with_init(cfg: &ModelConfig) -> Vec<(ParamSpec, Init)> {
    let d = cfg.d_model;
    let v = cfg.vocab_size;
    let p = |name: String, shape: Vec<usize>, decay: bool, init: Init| (ParamSpec { name, shape, decay }, init);
    let mut out =
        vec![p("tok_emb".into(), vec![v, d], false, Init::Normal), p("pos_emb".into(), vec![cfg.block_size, d], false, Init::Normal)];
    for l in 0..cfg.layers {
        let n = |s: &str| format!("h{l}.{s}");
        out.extend([
            p(n("ln1.gamma"), vec![d], false, Init::Ones),
            p(n("ln1.beta"), vec![d], false, Init::Zeros),
            p(n("attn.w_qkv"), vec![d, 3 * d], true, Init::Normal),
            p(n("attn.b_qkv"), vec![3 * d], false, Init::Zeros),
            p(n("attn.w_proj"), vec![d, d], true, Init::Residual),
            p(n("attn.b_proj"), vec![d], false, Init::Zeros),
            p(n("ln2.gamma"), vec![d], false, Init::Ones),
            p(n("ln2.beta"), vec![d], false, Init::Zeros),
            p(n("mlp.w_fc"), vec![d, 4 * d], true, Init::Normal),
            p(n("mlp.b_fc"), vec![4 * d], false, Init::Zeros),
            p(n("mlp.w_proj"), vec![4 * d, d], true, Init::Residual),
            p(n("mlp.b_proj"), vec![d], false, Init::Zeros),
        ]);
    }
    out.extend([
        p("ln_f.gamma".into(), vec![d], false, Init::Ones),
        p("ln_f.beta".into(), vec![d], false, Init::Zeros),
        p("head".into(), vec![d, v], true, Init::Normal),
    ]);
    for k in 2..=cfg.horizon {
        out.push(p(format!("trans{k}.w"), vec![d, d], true, Init::Identity));
        out.push(p(format!("trans{k}.b"), vec![d], false, Init::Zeros));
    }
    out
}

/// Positions of named parameters inside the schedule.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub layers: usize,
}

impl Layout {
    pub const TOK_EMB: usize = 0;
    pub const POS_EMB: usize = 1;

    pub fn block(&self, l: usize, which: usize) -> usize {
        2 + l * BLOCK_PARAMS.len() + which
    }

    pub fn ln_f_gamma(&self) -> usize {
        2 + self.layers * BLOCK_PARAMS.len()
    }

    pub fn ln_f_beta(&self) -> usize {
        self.ln_f_gamma() + 1
    }

    pub fn head(&self) -> usize {
        self.ln_f_gamma() + 2
    }

    /// Weight of transition layer `T^(k-1)`, `k >= 2`; the bias follows it.
    pub fn trans(&self, k: usize) -> usize {
        self.head() + 1 + 2 * (k - 2)
    }
}

/// Input hashes a trained bundle descends from.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub graph_hash: String,
    pub corpus_hash: String,
}

/// Parameters, configuration and vocabulary of one model.
pub struct ModelBundle<S> {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub provenance: Provenance,
    specs: Vec<ParamSpec>,
    params: Vec<Tensor<S>>,
    transition_evals: AtomicUsize,
}

impl<S: Scalar> Clone for ModelBundle<S> {
    fn clone(&self) -> Self {
        ModelBundle {
            config: self.config.clone(),
            vocab: self.vocab,
            provenance: self.provenance.clone(),
            specs: self.specs.clone(),
            params: self.params.clone(),
            transition_evals: AtomicUsize::new(self.transition_evals()),
        }
    }
}

impl<S: Scalar> ModelBundle<S> {
    /// Fresh parameters: normal(0, 0.02) weights, residual output
    /// projections scaled by `1/sqrt(2 * layers)`, unit norms, zero biases,
    /// identity transition layers.
    pub fn init(config: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        if vocab.size() != config.vocab_size {
            return Err(ModelError::Config(format!("vocabulary has {} tokens but the model expects {}", vocab.size(), config.vocab_size)));
        }
        let residual_std = 0.02 / (2.0 * config.layers as f64).sqrt();
        let mut specs = Vec::new();
        let mut params = Vec::new();
        for (i, (spec, init)) in schedule_with_init(&config).into_iter().enumerate() {
            let numel: usize = spec.shape.iter().product();
            let data: Vec<S> = match init {
                Init::Normal | Init::Residual => {
                    let std = if init == Init::Normal { 0.02 } else { residual_std };
                    let normal = Normal::new(0.0, std).expect("positive std");
                    let mut r = rng::stream(seed, "model/init", &[i as u64]);
                    (0..numel).map(|_| S::from_f64(normal.sample(&mut r))).collect()
                }
                Init::Ones => vec![S::one(); numel],
                Init::Zeros => vec![S::zero(); numel],
                Init::Identity => {
                    let d = spec.shape[0];
                    (0..numel).map(|j| if j / d == j % d { S::one() } else { S::zero() }).collect()
                }
            };
            params.push(Tensor::new(&spec.shape, data)?);
            specs.push(spec);
        }
        Ok(ModelBundle { config, vocab, provenance: Provenance::default(), specs, params, transition_evals: AtomicUsize::new(0) })
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn params(&self) -> &[Tensor<S>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<S>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<S>> {
        self.specs.iter().position(|s| s.name == name).map(|i| &self.params[i])
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    pub(crate) fn layout(&self) -> Layout {
        Layout { layers: self.config.layers }
    }

    /// Content hash of the parameter values, as recorded in checkpoints.
    pub fn params_hash(&self) -> String {
        params_hash(&self.params)
    }

    /// Number of transition-layer applications since creation.
    pub fn transition_evals(&self) -> usize {
        self.transition_evals.load(Ordering::Relaxed)
    }

    pub(crate) fn count_transition_eval(&self) {
        self.transition_evals.fetch_add(1, Ordering::Relaxed);
    }

    /// Same parameters in another precision.
    pub fn cast<T: Scalar>(&self) -> ModelBundle<T> {
        let mut config = self.config.clone();
        config.precision = T::PRECISION;
        ModelBundle {
            config,
            vocab: self.vocab,
            provenance: self.provenance.clone(),
            specs: self.specs.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
            transition_evals: AtomicUsize::new(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub version: u32,
    pub model: ModelConfig,
    pub vocab_n: usize,
    pub iter: usize,
    pub precision: Precision,
    pub rng_scheme: String,
    /// Batches and dropout masks are pure functions of `(seed, iter)`, so the
    /// seed and iteration are the whole sampler state.
    pub seed: u64,
    pub train: Option<TrainConfig>,
    pub provenance: Provenance,
    pub params: Vec<ParamEntry>,
    /// Adam step count and moment files, present when resumable.
    pub adam_step: Option<u64>,
    pub params_hash: String,
}

/// A saved model state, optionally with optimizer moments for resuming.
pub struct Checkpoint<S> {
    pub bundle: ModelBundle<S>,
    pub iter: usize,
    pub seed: u64,
    pub train: Option<TrainConfig>,
    pub adam: Option<AdamState<S>>,
}

fn write_array<S: Scalar>(path: &Path, data: &[S]) -> Result<(), ModelError> {
    let mut buf = Vec::with_capacity(data.len() * S::BYTES);
    for &v in data {
        v.write_le(&mut buf);
    }
    fs::write(path, buf)?;
    Ok(())
}

fn read_array<S: Scalar>(path: &Path, precision: Precision, numel: usize) -> Result<Vec<S>, ModelError> {
    let bytes = fs::read(path)?;
    let width = match precision {
        Precision::F32 => 4,
        Precision::F64 => 8,
    };
    if bytes.len() != numel * width {
        return Err(ModelError::Checkpoint(format!("{}: expected {} bytes, found {}", path.display(), numel * width, bytes.len())));
    }
    Ok(bytes
        .chunks_exact(width)
        .map(|c| match precision {
            Precision::F32 => S::from_f64(f32::read_le(c) as f64),
            Precision::F64 => S::from_f64(f64::read_le(c)),
        })
        .collect())
}

fn params_hash<S: Scalar>(params: &[Tensor<S>]) -> String {
    let mut buf = Vec::new();
    for p in params {
        for &v in p.data() {
            v.write_le(&mut buf);
        }
    }
    rng::content_hash(&buf)
}

pub fn manifest_file(dir: &Path) -> PathBuf {
    dir.join("manifest.json")
}

impl<S: Scalar> Checkpoint<S> {
    /// Writes `manifest.json`, `params/<name>.bin` and, with optimizer state,
    /// `adam/<name>.m.bin` / `adam/<name>.v.bin` (little-endian raw floats).
    pub fn save(&self, dir: &Path) -> Result<(), ModelError> {
        fs::create_dir_all(dir.join("params"))?;
        let b = &self.bundle;
        let mut entries = Vec::new();
        for (spec, t) in b.specs.iter().zip(&b.params) {
            let file = format!("params/{}.bin", spec.name);
            write_array(&dir.join(&file), t.data())?;
            entries.push(ParamEntry { name: spec.name.clone(), shape: spec.shape.clone(), file });
        }
        if let Some(adam) = &self.adam {
            fs::create_dir_all(dir.join("adam"))?;
            for (i, spec) in b.specs.iter().enumerate() {
                write_array(&dir.join(format!("adam/{}.m.bin", spec.name)), &adam.m[i])?;
                write_array(&dir.join(format!("adam/{}.v.bin", spec.name)), &adam.v[i])?;
            }
        }
        let manifest = CheckpointManifest {
            version: 1,
            model: b.config.clone(),
            vocab_n: b.vocab.n,
            iter: self.iter,
            precision: S::PRECISION,
            rng_scheme: rng::RNG_SCHEME.into(),
            seed: self.seed,
            train: self.train.clone(),
            provenance: b.provenance.clone(),
            params: entries,
            adam_step: self.adam.as_ref().map(|a| a.step),
            params_hash: params_hash(&b.params),
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| ModelError::Format(e.to_string()))?;
        fs::write(manifest_file(dir), text)?;
        Ok(())
    }

    pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest, ModelError> {
        let text = fs::read_to_string(manifest_file(dir))?;
        serde_json::from_str(&text).map_err(|e| ModelError::Format(format!("{}: {e}", manifest_file(dir).display())))
    }

    /// Loads a checkpoint, converting precision if it was saved in another.
    pub fn load(dir: &Path) -> Result<Self, ModelError> {
        let m = Self::read_manifest(dir)?;
        let mut config = m.model.clone();
        config.precision = S::PRECISION;
        config.validate()?;
        let schedule = param_schedule(&config);
        if schedule.len() != m.params.len() || schedule.iter().zip(&m.params).any(|(s, e)| s.name != e.name || s.shape != e.shape) {
            return Err(ModelError::Checkpoint("parameter list does not match the model schedule".into()));
        }
        let mut params = Vec::with_capacity(schedule.len());
        for (spec, e) in schedule.iter().zip(&m.params) {
            let numel = spec.shape.iter().product();
            params.push(Tensor::new(&spec.shape, read_array(&dir.join(&e.file), m.precision, numel)?)?);
        }
        if m.precision == S::PRECISION && params_hash(&params) != m.params_hash {
            return Err(ModelError::Checkpoint("parameter bytes do not match the recorded hash".into()));
        }
        let adam = match m.adam_step {
            Some(step) => {
                let mut st = AdamState { step, m: Vec::new(), v: Vec::new() };
                for spec in &schedule {
                    let numel = spec.shape.iter().product();
                    st.m.push(read_array(&dir.join(format!("adam/{}.m.bin", spec.name)), m.precision, numel)?);
                    st.v.push(read_array(&dir.join(format!("adam/{}.v.bin", spec.name)), m.precision, numel)?);
                }
                Some(st)
            }
            None => None,
        };
        let bundle = ModelBundle {
            config,
            vocab: Vocabulary::new(m.vocab_n),
            provenance: m.provenance,
            specs: schedule,
            params,
            transition_evals: AtomicUsize::new(0),
        };
        Ok(Checkpoint { bundle, iter: m.iter, seed: m.seed, train: m.train, adam })
    }
}
