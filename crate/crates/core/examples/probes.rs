//! Trains NTP and 2-token MTP briefly on the same corpus, then reads both
//! models' hidden states with the geometry probes and the ISP probe.
//!
//! cargo run --release --example probes -- [iters]

use mtplab::graphgen::generate_usg;
use mtplab::model::{train, ModelBundle, ModelConfig, Objective, TrainConfig, TrainOptions};
use mtplab::probes::{belief_compression, build_dump, isp_probe, random_baseline, structure_gain, BeliefCondition, Equivalence};
use mtplab::trajgen::{CorpusParams, TrajectoryCorpus};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let iters: usize = std::env::args().nth(1).map(|a| a.parse()).transpose()?.unwrap_or(600);
    let g = generate_usg(30, 0.3, 7)?;
    let corpus = TrajectoryCorpus::build(&g, &CorpusParams { seed: 7, ..CorpusParams::default() })?;

    for (objective, k) in [(Objective::Ntp, 1), (Objective::Mtp, 2)] {
        let cfg = ModelConfig { layers: 2, heads: 2, d_model: 32, ..ModelConfig::desk(corpus.block_size, corpus.vocab.size(), k) };
        let bundle = ModelBundle::<f32>::init(cfg, corpus.vocab, 1)?;
        let tc = TrainConfig { iters, batch: 32, warmup: iters / 10, lr_max: 2e-3, lr_min: 2e-4, ..TrainConfig::for_objective(objective) };
        let model = train(bundle, &corpus, tc, &TrainOptions::default())?.bundle;

        let dump = build_dump(&model, &corpus, 600, 4, false, 11)?;
        println!("{objective} K={k}: {} hidden states from 600 trajectories", dump.len());
        for k_eval in 2..=4 {
            let gain = structure_gain(&dump, k_eval, 2000, 11, Equivalence::Token)?;
            println!(
                "  structure gain k={k_eval}: {:+.4} (equivalent pairs {:.4}, random pairs {:.4})",
                gain.gain, gain.sim_f, gain.baseline
            );
        }
        for c in BeliefCondition::ALL {
            println!("  belief {:<7} {:.4}", c.label(), belief_compression(&dump, c, 2000, 11)?.value);
        }
        println!("  belief baseline {:.4}", random_baseline(&dump, 2000, 11)?.value);
        let isp = isp_probe(&model, &corpus, &g, 2000, (2, 4), 11)?;
        println!("  ISP {:.2e} over {} contexts, legal mass {:.4}", isp.isp, isp.contexts, isp.legal_prob);
    }
    Ok(())
}
