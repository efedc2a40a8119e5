//! Trains NTP, MTP and LSE-MTP on one 50-node street graph and prints the
//! loss curves' endpoints and next-token accuracy.
//!
//! cargo run --release --example train_objectives -- [iters] [batch]

use mtplab::graphgen::generate_usg;
use mtplab::model::{train, Batch, ModelBundle, ModelConfig, Objective, TrainConfig, TrainOptions};
use mtplab::trajgen::{CorpusParams, TrajectoryCorpus};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let iters = args.first().copied().unwrap_or(300);
    let batch = args.get(1).copied().unwrap_or(64);

    let graph = generate_usg(50, 0.3, 1)?;
    let corpus = TrajectoryCorpus::build(&graph, &CorpusParams { seed: 1, ..CorpusParams::default() })?;
    println!(
        "graph: {} nodes, {} edges; corpus: {} trajectories, block {}",
        graph.n(),
        graph.edges().len(),
        corpus.train.len(),
        corpus.block_size
    );

    for (objective, horizon) in [(Objective::Ntp, 1), (Objective::Mtp, 4), (Objective::Lse, 4)] {
        let cfg = ModelConfig::desk(corpus.block_size, corpus.vocab.size(), horizon);
        let bundle = ModelBundle::<f32>::init(cfg, corpus.vocab, 0)?;
        let tc = TrainConfig { iters, batch, warmup: iters / 10, ..TrainConfig::for_objective(objective) };
        let out = train(bundle, &corpus, tc, &TrainOptions { log_every: (iters / 5).max(1), ..Default::default() })?;
        let first = &out.curve[0];
        let last = out.curve.last().unwrap();
        let tps = out.curve.iter().map(|r| r.tokens_per_sec).sum::<f64>() / out.curve.len() as f64;

        // next-token accuracy on the training trajectories
        let seqs: Vec<&[usize]> = corpus.train.iter().take(512).map(|t| t.tokens.as_slice()).collect();
        let b = Batch::new(&seqs, corpus.vocab.pad())?;
        let logits = &out.bundle.forward(&b, 1)?.logits[0];
        let h = b.horizon(1);
        let v = corpus.vocab.size();
        let correct = h
            .rows
            .iter()
            .zip(&h.targets)
            .filter(|(&r, &t)| {
                let row = &logits.data()[r * v..(r + 1) * v];
                let arg = (0..v).max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a))).unwrap();
                arg == t
            })
            .count();
        println!(
            "{objective} K={horizon}: loss {:.3} -> {:.3}, next-token acc {:.3}, {:.0} tokens/s",
            first.total,
            last.total,
            correct as f64 / h.rows.len() as f64,
            tps
        );
    }
    Ok(())
}
