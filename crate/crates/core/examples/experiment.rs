//! A miniature end-to-end experiment: one street graph, three objectives,
//! the full probe suite and the joined report.
//!
//! cargo run --release --example experiment -- [out_dir]

use std::path::PathBuf;

use mtplab::experiment::{
    run_experiment, write_report, GraphSpec, ModelSpec, Preset, ProbeSpec, RunConfig, RunOptions, TrainSpec, VariantSpec,
};
use mtplab::model::Objective;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("mtplab-example"));
    let cfg = RunConfig {
        name: "example".into(),
        reps: 1,
        graphs: vec![GraphSpec::usg(25, 0.3)],
        model: ModelSpec { layers: 2, heads: 2, d_model: 32 },
        train: TrainSpec { iters: 500, batch: 32, lr_max: 2e-3, lr_min: 2e-4, warmup: 50, checkpoint_every: 100, ..TrainSpec::default() },
        variants: vec![VariantSpec::new(Objective::Ntp, 1), VariantSpec::new(Objective::Mtp, 2), VariantSpec::new(Objective::Lse, 2)],
        probes: ProbeSpec { contractivity_trajectories: 100, contractivity_pairs: 500, ..ProbeSpec::scaled(0.1) },
        ..RunConfig::preset(Preset::Ci)
    };
    println!("{}", cfg.to_toml());
    let results = run_experiment(&cfg, &out, &RunOptions { resume: true, only: Vec::new(), log_every: 100 })?;
    write_report(&results, &out.join("report"))?;
    print!("{}", std::fs::read_to_string(out.join("report").join("summary.txt"))?);
    Ok(())
}
