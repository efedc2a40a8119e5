use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{GraphSpec, RunConfig, VariantSpec};
use super::ExperimentError;
use crate::graphgen::{Graph, GraphKind};
use crate::model::{train, Checkpoint, ModelBundle, Objective, TrainOptions};
use crate::probes::{
    belief_compression, build_dump, compression_distinction, contractivity_pairs, contractivity_trace, current_state_probe, isp_probe,
    nav_eval, random_baseline, statewise_similarity, structure_gain, BeliefCondition, ContractivityTrace, Equivalence, PairSet, ProbeError,
    ProbeReport,
};
use crate::tensor::{Precision, Scalar};
use crate::trajgen::TrajectoryCorpus;

pub const PROBES_FILE: &str = "probes.json";

/// Graph and corpus of one replicate, shared by every variant.
pub struct World {
    pub spec: GraphSpec,
    pub rep: usize,
    pub graph: Graph,
    pub corpus: TrajectoryCorpus,
    pub dir: PathBuf,
    pub graph_hash: String,
    pub corpus_hash: String,
}

pub fn world_dir(root: &Path, spec: &GraphSpec, rep: usize) -> PathBuf {
    root.join(format!("{}-s{rep}", spec.label()))
}

/// Generates the graph and corpus of replicate `rep` and writes them.
pub fn prepare_world(cfg: &RunConfig, spec: &GraphSpec, rep: usize, root: &Path) -> Result<World, ExperimentError> {
    let graph = spec.build(cfg.graph_seed(spec, rep))?;
    let corpus = TrajectoryCorpus::build(&graph, &cfg.corpus.params(cfg.corpus_seed(spec, rep)))?;
    let dir = world_dir(root, spec, rep);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("graph.json"), graph.to_json())?;
    corpus.save(&dir.join("corpus.jsonl"))?;
    let (graph_hash, corpus_hash) = (graph.content_hash(), corpus.content_hash());
    Ok(World { spec: spec.clone(), rep, graph, corpus, dir, graph_hash, corpus_hash })
}

/// Reports, names of skipped probes, and the contractivity trace if any.
pub type ProbeOutcome = (Vec<ProbeReport>, Vec<String>, Option<ContractivityTrace>);

/// Probe inputs that depend only on the world: the fixed contractivity
/// pair set and the probe seed.
pub struct ProbeContext {
    pub seed: u64,
    pub contractivity: Option<PairSet>,
}

pub fn probe_context(cfg: &RunConfig, world: &World) -> Result<ProbeContext, ExperimentError> {
    let seed = cfg.probe_seed(&world.spec, world.rep);
    let p = &cfg.probes;
    let contractivity =
        match contractivity_pairs(&world.corpus, p.contractivity_trajectories, p.contractivity_k, p.contractivity_pairs, seed) {
            Ok(c) => Some(c),
            Err(ProbeError::Starved { .. }) => None,
            Err(e) => return Err(e.into()),
        };
    Ok(ProbeContext { seed, contractivity })
}

/// Everything measured on one trained variant; written as `probes.json`.
/// Timing lives elsewhere so this file replays bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantProbes {
    pub experiment: String,
    pub graph: String,
    pub graph_kind: GraphKind,
    pub rep: usize,
    pub variant: String,
    pub objective: Objective,
    pub k: usize,
    pub lambda_latent: f64,
    pub lambda_semantic: f64,
    pub precision: Precision,
    pub config_hash: String,
    pub graph_hash: String,
    pub corpus_hash: String,
    pub params_hash: String,
    pub probe_seed: u64,
    pub probe_scale: f64,
    pub final_loss: f64,
    pub reports: Vec<ProbeReport>,
    /// Metrics that could not be computed, with the reason.
    pub skipped: Vec<String>,
    pub contractivity: Option<ContractivityTrace>,
}

impl VariantProbes {
    pub fn report(&self, metric: &str) -> Option<&ProbeReport> {
        self.reports.iter().find(|r| r.metric == metric)
    }

    pub fn value(&self, metric: &str) -> Option<f64> {
        self.report(metric).map(|r| r.value)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(|_| ExperimentError::MissingInput(path.to_path_buf()))?;
        serde_json::from_str(&text).map_err(|e| ExperimentError::Format(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<(), ExperimentError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| ExperimentError::Format(e.to_string()))?;
        fs::write(path, text)?;
        Ok(())
    }
}

/// Collects a probe result, turning starvation into a skip note.
fn keep(out: &mut Vec<ProbeReport>, skipped: &mut Vec<String>, r: Result<Vec<ProbeReport>, ProbeError>) -> Result<(), ExperimentError> {
    match r {
        Ok(rs) => out.extend(rs),
        Err(e @ ProbeError::Starved { .. }) => {
            log::warn!("{e}");
            skipped.push(e.to_string());
        }
        Err(e) => return Err(e.into()),
    }
    Ok(())
}

/// The full metric suite on a trained bundle. `checkpoints` feed the
/// contractivity trace and may be empty.
pub fn probe_suite<S: Scalar>(
    cfg: &RunConfig,
    world: &World,
    bundle: &ModelBundle<S>,
    checkpoints: &[(usize, &ModelBundle<S>)],
    ctx: &ProbeContext,
) -> Result<ProbeOutcome, ExperimentError> {
    let p = &cfg.probes;
    let (g, corpus, seed) = (&world.graph, &world.corpus, ctx.seed);
    let mut out = Vec::new();
    let mut skipped = Vec::new();
    let dump = build_dump(bundle, corpus, p.dump_trajectories, p.k_eval, true, seed)?;
    for k in 2..=p.k_eval {
        keep(&mut out, &mut skipped, structure_gain(&dump, k, p.pairs, seed, Equivalence::Token).map(|r| vec![r.to_report()]))?;
        let node = structure_gain(&dump, k, p.pairs, seed, Equivalence::Node).map(|r| {
            let mut rep = r.to_report();
            rep.metric = format!("structure_gain_node_k{k}");
            vec![rep]
        });
        keep(&mut out, &mut skipped, node)?;
    }
    for cond in BeliefCondition::ALL {
        keep(&mut out, &mut skipped, belief_compression(&dump, cond, p.pairs, seed).map(|r| vec![r]))?;
    }
    keep(&mut out, &mut skipped, random_baseline(&dump, p.pairs, seed).map(|r| vec![r]))?;
    keep(&mut out, &mut skipped, statewise_similarity(&dump, p.pairs, seed).map(|r| vec![r]))?;
    keep(&mut out, &mut skipped, compression_distinction(&dump, g, corpus.vocab, p.eps, p.pairs, seed).map(|r| r.to_reports()))?;
    keep(&mut out, &mut skipped, current_state_probe(&dump, g.n(), p.state_test_fraction, p.state_epochs, seed).map(|r| r.to_reports()))?;
    let window = (p.isp_window[0], p.isp_window[1]);
    keep(&mut out, &mut skipped, isp_probe(bundle, corpus, g, p.isp_samples, window, seed).map(|r| r.to_reports()))?;
    keep(&mut out, &mut skipped, nav_eval(bundle, g, &corpus.test_pairs, 0.0, seed).map(|r| r.to_reports()))?;
    if p.detour_p > 0.0 {
        keep(&mut out, &mut skipped, nav_eval(bundle, g, &corpus.test_pairs, p.detour_p, seed).map(|r| r.to_reports()))?;
    }
    let mut trace = None;
    match (&ctx.contractivity, checkpoints.len()) {
        (Some((recs, pairs)), n) if n >= 2 => {
            let t = contractivity_trace(checkpoints, corpus, recs, pairs, p.contractivity_k)?;
            out.push(t.to_report());
            trace = Some(t);
        }
        (None, _) => skipped.push("contractivity_trace: no eligible pairs".into()),
        _ => skipped.push("contractivity_trace: fewer than two checkpoints".into()),
    }
    for r in &out {
        if !r.value.is_finite() || r.n == 0 {
            skipped.push(format!("{}: value {} over {} samples", r.metric, r.value, r.n));
        }
    }
    out.retain(|r| r.value.is_finite() && r.n > 0);
    Ok((out, skipped, trace))
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Reuse a variant's `probes.json` when its hashes match this config.
    pub resume: bool,
    /// Restrict to these variant tags (empty: all).
    pub only: Vec<String>,
    pub log_every: usize,
}

#[derive(Serialize)]
struct Timing {
    train_seconds: f64,
    probe_seconds: f64,
    iters: usize,
    mean_tokens_per_sec: f64,
}

fn train_and_probe<S: Scalar>(
    cfg: &RunConfig,
    world: &World,
    v: &VariantSpec,
    ctx: &ProbeContext,
    dir: &Path,
    opts: &RunOptions,
) -> Result<VariantProbes, ExperimentError> {
    let seed = cfg.variant_seed(&world.spec, world.rep, v);
    let corpus = &world.corpus;
    let mc = cfg.model_config(v, corpus.block_size, corpus.vocab.size());
    let bundle = ModelBundle::<S>::init(mc, corpus.vocab, seed)?;
    let t0 = Instant::now();
    let topts = TrainOptions { out_dir: Some(dir.to_path_buf()), stop_at: None, log_every: opts.log_every };
    let out = train(bundle, corpus, cfg.train_config(v, seed), &topts)?;
    let train_seconds = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let mut series = Vec::new();
    for (iter, path) in &out.checkpoints {
        series.push((*iter, Checkpoint::<S>::load(path)?.bundle));
    }
    let refs: Vec<(usize, &ModelBundle<S>)> = series.iter().map(|(i, b)| (*i, b)).collect();
    let (reports, skipped, contractivity) = probe_suite(cfg, world, &out.bundle, &refs, ctx)?;
    let probe_seconds = t1.elapsed().as_secs_f64();
    if !cfg.keep_checkpoints {
        for (_, path) in out.checkpoints.iter().rev().skip(1) {
            fs::remove_dir_all(path)?;
        }
    }
    let (lambda_latent, lambda_semantic) = v.lambdas();
    let vp = VariantProbes {
        experiment: cfg.name.clone(),
        graph: world.spec.label(),
        graph_kind: world.spec.kind,
        rep: world.rep,
        variant: v.tag(),
        objective: v.objective,
        k: v.k,
        lambda_latent,
        lambda_semantic,
        precision: cfg.precision,
        config_hash: cfg.content_hash(),
        graph_hash: world.graph_hash.clone(),
        corpus_hash: world.corpus_hash.clone(),
        params_hash: out.bundle.params_hash(),
        probe_seed: ctx.seed,
        probe_scale: cfg.probes.scale_factor(),
        final_loss: out.curve.last().map_or(f64::NAN, |r| r.total),
        reports,
        skipped,
        contractivity,
    };
    let timing = Timing {
        train_seconds,
        probe_seconds,
        iters: out.curve.len(),
        mean_tokens_per_sec: out.curve.iter().map(|r| r.tokens_per_sec).sum::<f64>() / out.curve.len().max(1) as f64,
    };
    fs::write(dir.join("timing.json"), serde_json::to_string_pretty(&timing).map_err(|e| ExperimentError::Format(e.to_string()))?)?;
    Ok(vp)
}

/// Trains one variant on a world from scratch, probes it and writes
/// `probes.json`.
pub fn run_variant(
    cfg: &RunConfig,
    world: &World,
    v: &VariantSpec,
    ctx: &ProbeContext,
    opts: &RunOptions,
) -> Result<VariantProbes, ExperimentError> {
    let dir = world.dir.join(v.tag());
    let file = dir.join(PROBES_FILE);
    if opts.resume && file.exists() {
        let old = VariantProbes::load(&file)?;
        if old.config_hash == cfg.content_hash() && old.graph_hash == world.graph_hash && old.corpus_hash == world.corpus_hash {
            log::info!("{}-s{} {}: reusing {}", world.spec.label(), world.rep, v.tag(), file.display());
            return Ok(old);
        }
    }
    if dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    fs::create_dir_all(&dir)?;
    log::info!("{}-s{} {}: training", world.spec.label(), world.rep, v.tag());
    let vp = match cfg.precision {
        Precision::F32 => train_and_probe::<f32>(cfg, world, v, ctx, &dir, opts)?,
        Precision::F64 => train_and_probe::<f64>(cfg, world, v, ctx, &dir, opts)?,
    };
    vp.save(&file)?;
    Ok(vp)
}

/// Every (graph, replicate, variant) cell of the grid, in config order.
pub fn run_experiment(cfg: &RunConfig, root: &Path, opts: &RunOptions) -> Result<Vec<VariantProbes>, ExperimentError> {
    cfg.validate()?;
    let tags: Vec<String> = cfg.variants.iter().map(|v| v.tag()).collect();
    if let Some(bad) = opts.only.iter().find(|t| !tags.contains(t)) {
        return Err(ExperimentError::Config(format!("no variant tagged '{bad}' (have {})", tags.join(", "))));
    }
    fs::create_dir_all(root)?;
    fs::write(root.join("run_config.toml"), cfg.to_toml())?;
    let mut all = Vec::new();
    for spec in &cfg.graphs {
        for rep in 0..cfg.reps {
            let world = prepare_world(cfg, spec, rep, root)?;
            let ctx = probe_context(cfg, &world)?;
            for v in cfg.variants.iter().filter(|v| v.runs_on(&spec.label())) {
                if !opts.only.is_empty() && !opts.only.contains(&v.tag()) {
                    continue;
                }
                all.push(run_variant(cfg, &world, v, &ctx, opts)?);
            }
        }
    }
    Ok(all)
}
