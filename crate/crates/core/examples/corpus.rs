//! Builds a trajectory corpus on a street graph and shows the token layout:
//! `[start, goal, increment..., pad]` with increments `d` at token `2n - 1 + d`.
//!
//! cargo run --release --example corpus -- [n] [seed]

use std::collections::BTreeMap;

use mtplab::graphgen::generate_usg;
use mtplab::trajgen::{decode, is_legal_path, CorpusParams, TrajectoryCorpus};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<u64> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let n = args.first().copied().unwrap_or(30) as usize;
    let seed = args.get(1).copied().unwrap_or(2);

    let g = generate_usg(n, 0.3, seed)?;
    let params = CorpusParams { seed, ..CorpusParams::default() };
    let corpus = TrajectoryCorpus::build(&g, &params)?;
    let v = corpus.vocab;
    println!(
        "{} train / {} test pairs, {} trajectories, block {}, vocab {} (pad {})",
        corpus.train_pairs.len(),
        corpus.test_pairs.len(),
        corpus.train.len(),
        corpus.block_size,
        v.size(),
        v.pad()
    );
    println!("parameters still at invented defaults: {:?}", params.invented_defaults());

    let mut by_source: BTreeMap<String, usize> = BTreeMap::new();
    for t in &corpus.train {
        *by_source.entry(format!("{:?}", t.source)).or_default() += 1;
        assert!(is_legal_path(&g, &t.nodes, t.goal));
    }
    println!("trajectories by source: {by_source:?}");

    for t in corpus.train.iter().step_by(corpus.train.len() / 3).take(3) {
        let offsets: Vec<i64> = t.tokens[2..].iter().filter_map(|&tok| v.decode_offset(tok)).collect();
        println!("{:?} {} -> {}: nodes {:?}", t.source, t.start, t.goal, t.nodes);
        println!("  tokens {:?}", &t.tokens[..t.len_tokens()]);
        println!("  offsets {offsets:?}, decoded back {:?}", decode(&t.tokens, &v)?);
    }
    Ok(())
}
