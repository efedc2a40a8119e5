//! Training resume, config round trips and experiment reuse.

use std::fs;

use mtplab::experiment::{
    load_results, run_experiment, GraphSpec, ModelSpec, Preset, ProbeSpec, RunConfig, RunOptions, TrainSpec, VariantSpec,
};
use mtplab::graphgen::generate_usg;
use mtplab::model::{run, train, Checkpoint, ModelBundle, ModelConfig, Objective, TrainConfig, TrainOptions, Trainer};
use mtplab::probes::nav_eval;
use mtplab::tensor::Precision;
use mtplab::trajgen::{CorpusParams, TrajectoryCorpus};

fn small_corpus(n: usize, seed: u64) -> TrajectoryCorpus {
    let g = generate_usg(n, 0.3, seed).unwrap();
    TrajectoryCorpus::build(&g, &CorpusParams { seed, ..CorpusParams::default() }).unwrap()
}

fn small_model(c: &TrajectoryCorpus, horizon: usize) -> ModelConfig {
    ModelConfig { layers: 1, heads: 2, d_model: 16, precision: Precision::F64, ..ModelConfig::desk(c.block_size, c.vocab.size(), horizon) }
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let c = small_corpus(14, 2);
    let tc = TrainConfig { iters: 30, batch: 8, warmup: 3, ..TrainConfig::for_objective(Objective::Lse) };
    let init = || ModelBundle::<f64>::init(small_model(&c, 3), c.vocab, 4).unwrap();
    let straight = train(init(), &c, tc.clone(), &TrainOptions::default()).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let half = train(init(), &c, tc, &TrainOptions { out_dir: Some(dir.path().to_path_buf()), stop_at: Some(13), log_every: 0 }).unwrap();
    let (at, path) = half.checkpoints.last().unwrap().clone();
    assert_eq!(at, 13);
    let resumed = run(Trainer::resume(Checkpoint::<f64>::load(&path).unwrap(), &c).unwrap(), &TrainOptions::default()).unwrap();

    assert_eq!(resumed.bundle.params_hash(), straight.bundle.params_hash());
    let tail: Vec<u64> = straight.curve[13..].iter().map(|r| r.total.to_bits()).collect();
    assert_eq!(resumed.curve.iter().map(|r| r.total.to_bits()).collect::<Vec<_>>(), tail);
}

#[test]
fn next_token_training_learns_to_navigate() {
    let g = generate_usg(12, 0.3, 8).unwrap();
    let c = TrajectoryCorpus::build(&g, &CorpusParams { seed: 8, ..CorpusParams::default() }).unwrap();
    let cfg = ModelConfig { layers: 2, heads: 2, d_model: 32, ..ModelConfig::desk(c.block_size, c.vocab.size(), 1) };
    let tc = TrainConfig { iters: 400, batch: 32, warmup: 40, lr_max: 3e-3, lr_min: 3e-4, ..TrainConfig::for_objective(Objective::Ntp) };
    let out = train(ModelBundle::<f32>::init(cfg, c.vocab, 1).unwrap(), &c, tc, &TrainOptions::default()).unwrap();
    let (first, last) = (out.curve[0].total, out.curve.last().unwrap().total);
    assert!(last < 0.5 * first, "loss {first} -> {last}");
    let train_pairs: Vec<_> = c.train_pairs.iter().copied().take(60).collect();
    let nav = nav_eval(&out.bundle, &g, &train_pairs, 0.0, 1).unwrap();
    assert!(nav.success_rate() > 0.5, "success {}", nav.success_rate());
}

#[test]
fn presets_survive_a_toml_round_trip() {
    for p in [Preset::Ci, Preset::Desk, Preset::Paper] {
        let cfg = RunConfig::preset(p);
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.content_hash(), cfg.content_hash());
    }
}

#[test]
fn loss_curves_written_twice_are_identical() {
    let c = small_corpus(12, 5);
    let tc = TrainConfig { iters: 6, batch: 4, warmup: 1, checkpoint_every: 0, ..TrainConfig::for_objective(Objective::Mtp) };
    let write = || {
        let dir = tempfile::tempdir().unwrap();
        let bundle = ModelBundle::<f64>::init(small_model(&c, 2), c.vocab, 9).unwrap();
        train(bundle, &c, tc.clone(), &TrainOptions { out_dir: Some(dir.path().to_path_buf()), stop_at: None, log_every: 0 }).unwrap();
        fs::read(dir.path().join("loss.csv")).unwrap()
    };
    let first = write();
    assert!(!String::from_utf8_lossy(&first).contains("tokens_per_sec"));
    assert_eq!(first, write());
}

fn tiny() -> RunConfig {
    RunConfig {
        name: "tiny".into(),
        reps: 1,
        precision: Precision::F64,
        graphs: vec![GraphSpec::usg(12, 0.3)],
        model: ModelSpec { layers: 1, heads: 2, d_model: 16 },
        train: TrainSpec { iters: 20, batch: 8, warmup: 2, checkpoint_every: 10, ..TrainSpec::default() },
        variants: vec![VariantSpec::new(Objective::Ntp, 1), VariantSpec::new(Objective::Mtp, 2)],
        probes: ProbeSpec { contractivity_trajectories: 30, contractivity_pairs: 50, state_epochs: 10, ..ProbeSpec::scaled(0.02) },
        ..RunConfig::preset(Preset::Ci)
    }
}

#[test]
fn resumed_experiments_reuse_matching_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny();
    let first = run_experiment(&cfg, dir.path(), &RunOptions { resume: true, only: Vec::new(), log_every: 0 }).unwrap();
    let loss = dir.path().join("usg12-s0").join("ntp").join("loss.csv");
    let stamp = fs::metadata(&loss).unwrap().modified().unwrap();
    let again = run_experiment(&cfg, dir.path(), &RunOptions { resume: true, only: Vec::new(), log_every: 0 }).unwrap();
    assert_eq!(fs::metadata(&loss).unwrap().modified().unwrap(), stamp);
    assert_eq!(serde_json::to_string(&first).unwrap(), serde_json::to_string(&again).unwrap());
    assert_eq!(load_results(dir.path()).unwrap().len(), 2);

    // a changed config retrains instead of reusing
    let changed = RunConfig { master_seed: cfg.master_seed + 1, ..cfg };
    let other = run_experiment(&changed, dir.path(), &RunOptions { resume: true, only: vec!["ntp".into()], log_every: 0 }).unwrap();
    assert_ne!(other[0].params_hash, first[0].params_hash);
}
