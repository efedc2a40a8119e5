use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use mtplab::experiment::{
    evaluate_criteria, load_results, prepare_world, run_experiment, write_report, ExperimentError, GraphSpec, Preset, RunConfig,
    RunOptions, VariantSpec,
};
use mtplab::graphgen::{Graph, GraphKind};
use mtplab::linlab::{coupling_grid, coupling_readout, write_outputs, Chaining, LinearConfig, LinlabSummary, OutputLaw, A, B, C, D};
use mtplab::model::{bench_objectives, train, BenchSpec, Checkpoint, ModelBundle, Objective, TrainOptions, Trainer};
use mtplab::probes::{
    belief_compression, build_dump, compression_distinction, current_state_probe, isp_probe, nav_eval, random_baseline,
    statewise_similarity, structure_gain, write_reports_csv, write_reports_json, BeliefCondition, Equivalence, HiddenDump, ProbeReport,
};
use mtplab::tensor::{Precision, Scalar};
use mtplab::trajgen::TrajectoryCorpus;

/// Only environment variable read: overrides the root of default output paths.
const OUT_ENV: &str = "MTPLAB_OUT";

#[derive(Parser)]
#[command(name = "mtplab", version, about = "Graph-navigation lab for NTP, MTP and LSE-MTP objectives")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Global {
    /// Experiment config (TOML); overrides --preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (experiment commands) or generator seed (gen-*, train).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    preset: Option<PresetArg>,
    #[arg(long, global = true, value_enum)]
    precision: Option<PrecisionArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Ci,
    Desk,
    Paper,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Usg,
    Er,
    ErDag,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    StructureGain,
    Belief,
    Statewise,
    Distinction,
    State,
    Isp,
    Nav,
    Detour,
    All,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a graph file.
    GenGraph {
        #[arg(long, value_enum)]
        kind: KindArg,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long)]
        p: Option<f64>,
    },
    /// Build a trajectory corpus from a graph file.
    GenCorpus {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        k_paths: Option<usize>,
        #[arg(long)]
        p_detour: Option<f64>,
        #[arg(long)]
        p_rec: Option<f64>,
        #[arg(long)]
        train_fraction: Option<f64>,
    },
    /// Train one objective on a corpus, with model and schedule from the preset or config.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        /// Graph file to check the corpus against.
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long, default_value = "ntp")]
        objective: Objective,
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        lambda_latent: Option<f64>,
        #[arg(long)]
        lambda_semantic: Option<f64>,
        /// Continue from this checkpoint directory instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Write normalized final-layer states with annotations.
    DumpHidden {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 4000)]
        trajectories: usize,
        #[arg(long, default_value_t = 4)]
        k_eval: usize,
        /// Also store next-token distributions.
        #[arg(long)]
        probs: bool,
    },
    /// Run probe metrics on a checkpoint.
    Probe {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        /// Existing dump to use instead of building one.
        #[arg(long)]
        dump: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "all")]
        metric: MetricArg,
        /// Eval horizon for structure gain (all of 2..=k_eval when absent).
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        pairs: Option<usize>,
    },
    /// Five-state linear coupling experiment over the lr x init grid.
    Linlab {
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, value_delimiter = ',', default_values_t = mtplab::linlab::LR_GRID)]
        lr: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = mtplab::linlab::INIT_GRID)]
        init: Vec<f64>,
        #[arg(long)]
        mse: bool,
        #[arg(long)]
        teacher_forced: bool,
    },
    /// Join probe results into tables and the acceptance summary.
    Report {
        /// Experiment root holding <graph>-s<rep>/<variant>/probes.json.
        #[arg(long)]
        root: PathBuf,
        /// Exit non-zero when an acceptance check fails.
        #[arg(long)]
        check: bool,
    },
    /// Training throughput per objective on the first graph of the preset.
    Bench {
        #[arg(long, default_value_t = 20)]
        steps: usize,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long, default_value_t = 4)]
        k: usize,
    },
    /// Full pipeline: worlds, every variant, probes, report.
    Run {
        /// Reuse variants whose recorded hashes match this config.
        #[arg(long)]
        resume: bool,
        /// Only these variant tags (comma separated).
        #[arg(long, value_delimiter = ',')]
        only: Vec<String>,
        /// Exit non-zero when an acceptance check fails.
        #[arg(long)]
        check: bool,
    },
}

fn out_path(global: &Global, default: &str) -> PathBuf {
    global.out.clone().unwrap_or_else(|| match std::env::var_os(OUT_ENV) {
        Some(root) => PathBuf::from(root).join(default),
        None => PathBuf::from(default),
    })
}

fn run_config(global: &Global) -> Result<RunConfig, ExperimentError> {
    let mut cfg = match (&global.config, global.preset) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, p) => RunConfig::preset(match p.unwrap_or(PresetArg::Desk) {
            PresetArg::Ci => Preset::Ci,
            PresetArg::Desk => Preset::Desk,
            PresetArg::Paper => Preset::Paper,
        }),
    };
    if let Some(s) = global.seed {
        cfg.master_seed = s;
    }
    if let Some(p) = global.precision {
        cfg.precision = precision(p);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn precision(p: PrecisionArg) -> Precision {
    match p {
        PrecisionArg::F32 => Precision::F32,
        PrecisionArg::F64 => Precision::F64,
    }
}

fn need(path: &Path) -> Result<(), ExperimentError> {
    if path.exists() {
        Ok(())
    } else {
        Err(ExperimentError::MissingInput(path.to_path_buf()))
    }
}

fn load_graph(path: &Path) -> Result<Graph, ExperimentError> {
    need(path)?;
    Ok(Graph::from_json(&fs::read_to_string(path)?)?)
}

fn load_corpus(path: &Path) -> Result<TrajectoryCorpus, ExperimentError> {
    need(path)?;
    Ok(TrajectoryCorpus::load(path)?)
}

fn load_checkpoint<S: Scalar>(dir: &Path) -> Result<Checkpoint<S>, ExperimentError> {
    need(&mtplab::model::manifest_file(dir))?;
    Ok(Checkpoint::<S>::load(dir)?)
}

/// The recorded provenance of a bundle must match the files given.
fn check_provenance<S: Scalar>(b: &ModelBundle<S>, corpus: &TrajectoryCorpus, graph: Option<&Graph>) -> Result<(), ExperimentError> {
    let p = &b.provenance;
    if !p.corpus_hash.is_empty() && p.corpus_hash != corpus.content_hash() {
        return Err(ExperimentError::HashMismatch("checkpoint was trained on a different corpus".into()));
    }
    if let Some(g) = graph {
        check_corpus_graph(corpus, g)?;
        if !p.graph_hash.is_empty() && p.graph_hash != g.content_hash() {
            return Err(ExperimentError::HashMismatch("checkpoint was trained on a different graph".into()));
        }
    }
    Ok(())
}

fn check_corpus_graph(corpus: &TrajectoryCorpus, g: &Graph) -> Result<(), ExperimentError> {
    if corpus.graph_hash != g.content_hash() {
        return Err(ExperimentError::HashMismatch("corpus was generated from a different graph".into()));
    }
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value).map_err(|e| ExperimentError::Format(e.to_string()))?)?;
    Ok(())
}

fn gen_graph(global: &Global, kind: KindArg, n: usize, rho: Option<f64>, p: Option<f64>) -> Result<(), ExperimentError> {
    let kind = match kind {
        KindArg::Usg => GraphKind::Usg,
        KindArg::Er => GraphKind::Er,
        KindArg::ErDag => GraphKind::ErDag,
    };
    let spec = GraphSpec { kind, n, p, rho };
    let g = spec.build(global.seed.unwrap_or(0))?;
    let out = out_path(global, "graph.json");
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(&out, g.to_json())?;
    println!("{} nodes, {} edges -> {} (hash {})", g.n(), g.edges().len(), out.display(), g.content_hash());
    Ok(())
}

fn gen_corpus(global: &Global, graph: &Path, over: [Option<f64>; 3], k_paths: Option<usize>) -> Result<(), ExperimentError> {
    let g = load_graph(graph)?;
    let mut params = RunConfig::preset(Preset::Desk).corpus.params(global.seed.unwrap_or(0));
    params.k_paths = k_paths.unwrap_or(params.k_paths);
    params.p_detour = over[0].unwrap_or(params.p_detour);
    params.p_rec = over[1].unwrap_or(params.p_rec);
    params.train_fraction = over[2].unwrap_or(params.train_fraction);
    let corpus = TrajectoryCorpus::build(&g, &params)?;
    let out = out_path(global, "corpus.jsonl");
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    corpus.save(&out)?;
    println!(
        "{} training trajectories, {} train / {} test pairs, block {} -> {} (hash {})",
        corpus.train.len(),
        corpus.train_pairs.len(),
        corpus.test_pairs.len(),
        corpus.block_size,
        out.display(),
        corpus.content_hash()
    );
    Ok(())
}

struct TrainArgs {
    corpus: PathBuf,
    graph: Option<PathBuf>,
    objective: Objective,
    k: usize,
    iters: Option<usize>,
    lambdas: (Option<f64>, Option<f64>),
    resume: Option<PathBuf>,
}

fn train_cmd<S: Scalar>(global: &Global, cfg: &RunConfig, a: &TrainArgs) -> Result<(), ExperimentError> {
    let corpus = load_corpus(&a.corpus)?;
    if let Some(g) = &a.graph {
        check_corpus_graph(&corpus, &load_graph(g)?)?;
    }
    let out = out_path(global, &format!("train-{}", a.objective));
    let opts = TrainOptions { out_dir: Some(out.clone()), stop_at: None, log_every: 100 };
    let outcome = match &a.resume {
        Some(dir) => {
            let ck = load_checkpoint::<S>(dir)?;
            check_provenance(&ck.bundle, &corpus, None)?;
            mtplab::model::run(Trainer::resume(ck, &corpus)?, &opts)?
        }
        None => {
            let v = VariantSpec { lambda_latent: a.lambdas.0, lambda_semantic: a.lambdas.1, ..VariantSpec::new(a.objective, a.k) };
            let seed = global.seed.unwrap_or(0);
            let mut tc = cfg.train_config(&v, seed);
            if let Some(i) = a.iters {
                tc.iters = i;
            }
            let bundle = ModelBundle::<S>::init(cfg.model_config(&v, corpus.block_size, corpus.vocab.size()), corpus.vocab, seed)?;
            train(bundle, &corpus, tc, &opts)?
        }
    };
    let last = outcome.curve.last();
    println!(
        "{} iterations, final loss {}, {} checkpoints under {}",
        outcome.curve.len(),
        last.map_or("-".into(), |r| format!("{:.4}", r.total)),
        outcome.checkpoints.len(),
        out.display()
    );
    Ok(())
}

fn dump_cmd<S: Scalar>(global: &Global, ck: &Path, corpus: &Path, n: usize, k_eval: usize, probs: bool) -> Result<(), ExperimentError> {
    let corpus = load_corpus(corpus)?;
    let b = load_checkpoint::<S>(ck)?.bundle;
    check_provenance(&b, &corpus, None)?;
    let dump = build_dump(&b, &corpus, n, k_eval, probs, global.seed.unwrap_or(0))?;
    let out = out_path(global, "dump.bin");
    dump.save(&out)?;
    println!("{} positions from {} trajectories, d = {} -> {}", dump.len(), dump.meta.trajectories, dump.meta.d, out.display());
    Ok(())
}

struct ProbeArgs {
    checkpoint: PathBuf,
    corpus: PathBuf,
    graph: PathBuf,
    dump: Option<PathBuf>,
    metric: MetricArg,
    k: Option<usize>,
    pairs: Option<usize>,
}

fn probe_cmd<S: Scalar>(global: &Global, cfg: &RunConfig, a: &ProbeArgs) -> Result<(), ExperimentError> {
    let graph = load_graph(&a.graph)?;
    let corpus = load_corpus(&a.corpus)?;
    let b = load_checkpoint::<S>(&a.checkpoint)?.bundle;
    check_provenance(&b, &corpus, Some(&graph))?;
    let p = &cfg.probes;
    let seed = global.seed.unwrap_or(0);
    let pairs = a.pairs.unwrap_or(p.pairs);
    let wants = |m: MetricArg| matches!(a.metric, MetricArg::All) || std::mem::discriminant(&a.metric) == std::mem::discriminant(&m);
    let needs_dump = [MetricArg::StructureGain, MetricArg::Belief, MetricArg::Statewise, MetricArg::Distinction, MetricArg::State]
        .into_iter()
        .any(wants);
    let mut reports: Vec<ProbeReport> = Vec::new();
    if needs_dump {
        let dump = match &a.dump {
            Some(path) => {
                need(path)?;
                let d = HiddenDump::load(path)?;
                if d.meta.corpus_hash != corpus.content_hash() || d.meta.params_hash != b.params_hash() {
                    return Err(ExperimentError::HashMismatch("dump was taken from another corpus or checkpoint".into()));
                }
                d
            }
            None => build_dump(&b, &corpus, p.dump_trajectories, a.k.unwrap_or(2).max(p.k_eval), true, seed)?,
        };
        if wants(MetricArg::StructureGain) {
            let ks: Vec<usize> = match a.k {
                Some(k) => vec![k],
                None => (2..=dump.meta.k_eval).collect(),
            };
            for k in ks {
                reports.push(structure_gain(&dump, k, pairs, seed, Equivalence::Token)?.to_report());
            }
        }
        if wants(MetricArg::Belief) {
            for c in BeliefCondition::ALL {
                reports.push(belief_compression(&dump, c, pairs, seed)?);
            }
            reports.push(random_baseline(&dump, pairs, seed)?);
        }
        if wants(MetricArg::Statewise) {
            reports.push(statewise_similarity(&dump, pairs, seed)?);
        }
        if wants(MetricArg::Distinction) {
            reports.extend(compression_distinction(&dump, &graph, corpus.vocab, p.eps, pairs, seed)?.to_reports());
        }
        if wants(MetricArg::State) {
            reports.extend(current_state_probe(&dump, graph.n(), p.state_test_fraction, p.state_epochs, seed)?.to_reports());
        }
    }
    if wants(MetricArg::Isp) {
        reports.extend(isp_probe(&b, &corpus, &graph, p.isp_samples, (p.isp_window[0], p.isp_window[1]), seed)?.to_reports());
    }
    if wants(MetricArg::Nav) {
        reports.extend(nav_eval(&b, &graph, &corpus.test_pairs, 0.0, seed)?.to_reports());
    }
    if wants(MetricArg::Detour) {
        reports.extend(nav_eval(&b, &graph, &corpus.test_pairs, p.detour_p, seed)?.to_reports());
    }
    for r in &mut reports {
        r.config.insert("graph_hash".into(), graph.content_hash());
        r.config.insert("corpus_hash".into(), corpus.content_hash());
        r.config.insert("params_hash".into(), b.params_hash());
        r.config.insert("seed".into(), seed.to_string());
    }
    let out = out_path(global, "probes.json");
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_reports_json(&out, &reports)?;
    write_reports_csv(&out.with_extension("csv"), &reports)?;
    for r in &reports {
        println!("{:<28} {:>12.6}  (n = {}, sd {:.2e})", r.metric, r.value, r.n, r.std);
    }
    Ok(())
}

fn linlab_cmd(global: &Global, steps: usize, lrs: &[f64], inits: &[f64], mse: bool, tf: bool) -> Result<(), ExperimentError> {
    let base = LinearConfig {
        steps,
        law: if mse { OutputLaw::Mse } else { OutputLaw::CrossEntropy },
        chaining: if tf { Chaining::TeacherForced } else { Chaining::Predicted },
        ..LinearConfig::default()
    };
    let grid = coupling_grid(lrs, inits, &base)?;
    let out = out_path(global, "linlab");
    let mut summary = LinlabSummary { runs: Vec::new(), readouts: Vec::new() };
    let mut csv = String::from("lr,init,wb_A_to_D_1tp,wb_A_to_D_2tp,wb_B_to_C_1tp,wb_B_to_C_2tp,strict_from,lagging_steps,integrated_coupling_1tp,integrated_coupling_2tp\n");
    for c in &grid {
        let (o, t) = (&c.one.world.w_b, &c.two.world.w_b);
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            c.lr,
            c.init,
            o[D][A],
            t[D][A],
            o[C][B],
            t[C][B],
            c.strict_from().map_or("never".into(), |s| s.to_string()),
            c.lagging(),
            c.one.integrated_coupling(),
            c.two.integrated_coupling()
        ));
        println!(
            "lr {:<5} init {:<4} W_B(A->D) 1tp {:+.4} 2tp {:+.4}  W_B(B->C) 1tp {:+.4} 2tp {:+.4}  2tp ahead from step {}",
            c.lr,
            c.init,
            o[D][A],
            t[D][A],
            o[C][B],
            t[C][B],
            c.strict_from().map_or("never".into(), |s| s.to_string())
        );
        for run in [&c.one, &c.two] {
            summary.readouts.push(coupling_readout(&run.world, base.law, base.chaining));
            summary.runs.push(run.clone());
        }
    }
    write_outputs(&out, &summary)?;
    fs::write(out.join("grid.csv"), csv)?;
    Ok(())
}

fn report_cmd(global: &Global, root: &Path, check: bool) -> Result<(), ExperimentError> {
    let results = load_results(root)?;
    let out = global.out.clone().unwrap_or_else(|| root.join("report"));
    let summary = write_report(&results, &out)?;
    print!("{}", fs::read_to_string(out.join("summary.txt"))?);
    if check && !summary.all_pass() {
        let failed: Vec<String> =
            summary.criteria.iter().filter(|c| c.pass == Some(false)).map(|c| format!("{} ({})", c.id, c.scope)).collect();
        return Err(ExperimentError::Invariant(format!("acceptance checks failed: {}", failed.join(", "))));
    }
    Ok(())
}

fn bench_cmd<S: Scalar>(global: &Global, cfg: &RunConfig, steps: usize, repeats: usize, k: usize) -> Result<(), ExperimentError> {
    let root = out_path(global, "bench");
    let world = prepare_world(cfg, &cfg.graphs[0], 0, &root)?;
    let v = VariantSpec::new(Objective::Ntp, 1);
    let base = cfg.model_config(&v, world.corpus.block_size, world.corpus.vocab.size());
    let tc = cfg.train_config(&v, cfg.master_seed);
    let specs = [
        BenchSpec { objective: Objective::Ntp, horizon: 1 },
        BenchSpec { objective: Objective::Mtp, horizon: k },
        BenchSpec { objective: Objective::Lse, horizon: k },
    ];
    let results = bench_objectives::<S>(&base, &tc, &world.corpus, &specs, steps, repeats)?;
    for r in &results {
        println!("{:<4} K={}  {:>10.0} tokens/s", r.objective.to_string(), r.horizon, r.tokens_per_sec);
    }
    let (ntp, mtp, lse) = (results[0].tokens_per_sec, results[1].tokens_per_sec, results[2].tokens_per_sec);
    println!("lse/mtp {:.3} (>= 0.95)   mtp/ntp {:.3} (>= 0.75)", lse / mtp, mtp / ntp);
    write_json(&root.join("bench.json"), &results)?;
    Ok(())
}

fn run_cmd(global: &Global, cfg: &RunConfig, resume: bool, only: Vec<String>, check: bool) -> Result<(), ExperimentError> {
    let root = out_path(global, &format!("runs/{}", cfg.name));
    let results = run_experiment(cfg, &root, &RunOptions { resume, only, log_every: cfg.train.iters.div_ceil(10) })?;
    info!("{} variant runs finished", results.len());
    let summary = write_report(&results, &root.join("report"))?;
    print!("{}", fs::read_to_string(root.join("report").join("summary.txt"))?);
    if check {
        let crit = evaluate_criteria(&results);
        if crit.iter().any(|c| c.pass == Some(false)) || !summary.all_pass() {
            return Err(ExperimentError::Invariant("acceptance checks failed".into()));
        }
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), ExperimentError> {
    let g = &cli.global;
    match cli.cmd {
        Cmd::GenGraph { kind, n, rho, p } => gen_graph(g, kind, n, rho, p),
        Cmd::GenCorpus { graph, k_paths, p_detour, p_rec, train_fraction } => {
            gen_corpus(g, &graph, [p_detour, p_rec, train_fraction], k_paths)
        }
        Cmd::Train { corpus, graph, objective, k, iters, lambda_latent, lambda_semantic, resume } => {
            let cfg = run_config(g)?;
            let a = TrainArgs { corpus, graph, objective, k, iters, lambdas: (lambda_latent, lambda_semantic), resume };
            match cfg.precision {
                Precision::F32 => train_cmd::<f32>(g, &cfg, &a),
                Precision::F64 => train_cmd::<f64>(g, &cfg, &a),
            }
        }
        Cmd::DumpHidden { checkpoint, corpus, trajectories, k_eval, probs } => match g.precision.map(precision) {
            Some(Precision::F32) => dump_cmd::<f32>(g, &checkpoint, &corpus, trajectories, k_eval, probs),
            _ => dump_cmd::<f64>(g, &checkpoint, &corpus, trajectories, k_eval, probs),
        },
        Cmd::Probe { checkpoint, corpus, graph, dump, metric, k, pairs } => {
            let cfg = run_config(g)?;
            let a = ProbeArgs { checkpoint, corpus, graph, dump, metric, k, pairs };
            match g.precision.map(precision) {
                Some(Precision::F32) => probe_cmd::<f32>(g, &cfg, &a),
                _ => probe_cmd::<f64>(g, &cfg, &a),
            }
        }
        Cmd::Linlab { steps, lr, init, mse, teacher_forced } => linlab_cmd(g, steps, &lr, &init, mse, teacher_forced),
        Cmd::Report { root, check } => report_cmd(g, &root, check),
        Cmd::Bench { steps, repeats, k } => {
            let cfg = run_config(g)?;
            match cfg.precision {
                Precision::F32 => bench_cmd::<f32>(g, &cfg, steps, repeats, k),
                Precision::F64 => bench_cmd::<f64>(g, &cfg, steps, repeats, k),
            }
        }
        Cmd::Run { resume, only, check } => run_cmd(g, &run_config(g)?, resume, only, check),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp_secs().init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
