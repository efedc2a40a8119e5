//! Greedy navigation on held-out start/goal pairs, clean and with random
//! detours injected, for a next-token model.
//!
//! cargo run --release --example navigation -- [iters]

use mtplab::graphgen::generate_usg;
use mtplab::model::{generate_many, train, GenerateOptions, ModelBundle, ModelConfig, Objective, TrainConfig, TrainOptions};
use mtplab::probes::nav_eval;
use mtplab::trajgen::{CorpusParams, TrajectoryCorpus};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let iters: usize = std::env::args().nth(1).map(|a| a.parse()).transpose()?.unwrap_or(1500);
    let g = generate_usg(50, 0.3, 3)?;
    let corpus = TrajectoryCorpus::build(&g, &CorpusParams { seed: 3, ..CorpusParams::default() })?;
    let cfg = ModelConfig { layers: 2, heads: 2, d_model: 48, ..ModelConfig::desk(corpus.block_size, corpus.vocab.size(), 1) };
    let tc = TrainConfig { iters, batch: 32, warmup: iters / 10, lr_max: 2e-3, lr_min: 2e-4, ..TrainConfig::for_objective(Objective::Ntp) };
    let model =
        train(ModelBundle::<f32>::init(cfg, corpus.vocab, 0)?, &corpus, tc, &TrainOptions { log_every: iters / 5, ..Default::default() })?
            .bundle;

    for p in [0.0, 0.1] {
        let r = nav_eval(&model, &g, &corpus.test_pairs, p, 5)?;
        println!(
            "detour p {p}: {} pairs, success {:.3}, disconnection {:.3}, wrong target {:.3}",
            r.n,
            r.success_rate(),
            r.disconnection_rate(),
            r.wrong_target_rate()
        );
    }
    let opts = GenerateOptions { seed: 5, ..GenerateOptions::default() };
    for ro in generate_many(&model, &g, &corpus.test_pairs[..3], &opts)? {
        println!("{} -> {}: {:?} reached {} first illegal step {:?}", ro.start, ro.goal, ro.nodes, ro.reached_goal, ro.first_illegal);
    }
    Ok(())
}
