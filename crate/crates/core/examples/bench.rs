//! Training throughput of NTP, MTP and LSE-MTP at equal horizon on the same
//! batches.
//!
//! cargo run --release --example bench -- [steps] [repeats] [k]

use mtplab::experiment::{Preset, RunConfig, VariantSpec};
use mtplab::model::{bench_objectives, BenchSpec, Objective};
use mtplab::trajgen::TrajectoryCorpus;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let steps = args.first().copied().unwrap_or(20);
    let repeats = args.get(1).copied().unwrap_or(3);
    let k = args.get(2).copied().unwrap_or(4);

    let cfg = RunConfig::preset(Preset::Desk);
    let spec = &cfg.graphs[0];
    let g = spec.build(cfg.graph_seed(spec, 0))?;
    let corpus = TrajectoryCorpus::build(&g, &cfg.corpus.params(cfg.corpus_seed(spec, 0)))?;
    let v = VariantSpec::new(Objective::Ntp, 1);
    let base = cfg.model_config(&v, corpus.block_size, corpus.vocab.size());
    let tc = cfg.train_config(&v, 0);
    let specs = [
        BenchSpec { objective: Objective::Ntp, horizon: 1 },
        BenchSpec { objective: Objective::Mtp, horizon: k },
        BenchSpec { objective: Objective::Lse, horizon: k },
    ];
    let r = bench_objectives::<f32>(&base, &tc, &corpus, &specs, steps, repeats)?;
    for x in &r {
        println!(
            "{} K={}: {:.0} tokens/s (repeats {:?})",
            x.objective,
            x.horizon,
            x.tokens_per_sec,
            x.repeats.iter().map(|t| t.round()).collect::<Vec<_>>()
        );
    }
    println!("LSE/MTP {:.3}, MTP/NTP {:.3}", r[2].tokens_per_sec / r[1].tokens_per_sec, r[1].tokens_per_sec / r[0].tokens_per_sec);
    Ok(())
}
