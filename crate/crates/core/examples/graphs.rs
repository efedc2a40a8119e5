//! Generates the three graph families and prints degree, reachability and a
//! few K-shortest path sets.
//!
//! cargo run --release --example graphs -- [n] [seed]

use mtplab::graphgen::{generate_er, generate_usg, reachable_pairs, Graph};
use mtplab::trajgen::k_shortest;

fn describe(name: &str, g: &Graph) {
    let degrees: Vec<usize> = (0..g.n()).map(|u| g.neighbors(u).len()).collect();
    let reach = reachable_pairs(g).len();
    let total = g.n() * (g.n() - 1);
    println!(
        "{name:<7} {} nodes, {} directed edges, out-degree {}..{} (mean {:.2}), {reach}/{total} ordered pairs reachable, hash {}",
        g.n(),
        g.edges().len(),
        degrees.iter().min().unwrap(),
        degrees.iter().max().unwrap(),
        g.edges().len() as f64 / g.n() as f64,
        &g.content_hash()[..16]
    );
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<u64> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let n = args.first().copied().unwrap_or(50) as usize;
    let seed = args.get(1).copied().unwrap_or(1);

    let usg = generate_usg(n, 0.3, seed)?;
    let er = generate_er(n, 0.08, false, seed)?;
    let dag = generate_er(n, 0.15, true, seed)?;
    describe("usg", &usg);
    describe("er", &er);
    describe("er-dag", &dag);

    // the same seed always yields the same graph
    assert_eq!(generate_usg(n, 0.3, seed)?.content_hash(), usg.content_hash());

    for (s, t) in reachable_pairs(&usg).into_iter().step_by(n * 7).take(3) {
        println!("usg {s} -> {t}:");
        for p in k_shortest(&usg, s, t, 3) {
            println!("  {} hops: {p:?}", p.len() - 1);
        }
    }
    Ok(())
}
