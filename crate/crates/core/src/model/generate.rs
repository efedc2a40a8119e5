use rand::seq::IndexedRandom;
use rand::Rng as _;

use super::forward::{backbone, head, register, Batch};
use super::{ModelBundle, ModelError};
use crate::graphgen::Graph;
use crate::rng;
use crate::tensor::{Scalar, Tape};

#[derive(Debug, Clone)]
pub struct GenerateOptions {
    /// Step cap; also bounded by the model's block size.
    pub max_len: usize,
    /// Per-step probability of replacing the top-1 action with a uniformly
    /// random legal alternative.
    pub perturb_p: f64,
    pub seed: u64,
    /// Keep the full next-token distribution of every step.
    pub keep_dists: bool,
    /// Sequences decoded together per forward pass.
    pub chunk: usize,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        GenerateOptions { max_len: usize::MAX, perturb_p: 0.0, seed: 0, keep_dists: false, chunk: 256 }
    }
}

/// A decoded trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub start: usize,
    pub goal: usize,
    /// Visited nodes, starting with `start`. An out-of-range step is not
    /// appended.
    pub nodes: Vec<usize>,
    pub tokens: Vec<usize>,
    pub reached_goal: bool,
    /// Step index (0-based) of the first move that is not a graph edge.
    pub first_illegal: Option<usize>,
    /// Whether the first illegal move left the node range entirely.
    pub out_of_range: bool,
    pub perturbed_steps: usize,
    pub dists: Vec<Vec<f64>>,
}

/// Greedy decoding over increment tokens from `[start, goal]`, using only
/// the next-token head. Decoding stops at the goal, at the first illegal
/// move, or at the step cap.
pub fn generate<S: Scalar>(
    bundle: &ModelBundle<S>,
    graph: &Graph,
    start: usize,
    goal: usize,
    opts: &GenerateOptions,
) -> Result<Rollout, ModelError> {
    Ok(generate_many(bundle, graph, &[(start, goal)], opts)?.remove(0))
}

/// [`generate`] for many pairs, decoded in lockstep. Pair `i` draws its
/// perturbations from a stream keyed by `(seed, i)`.
pub fn generate_many<S: Scalar>(
    bundle: &ModelBundle<S>,
    graph: &Graph,
    pairs: &[(usize, usize)],
    opts: &GenerateOptions,
) -> Result<Vec<Rollout>, ModelError> {
    let vocab = bundle.vocab;
    if graph.n() != vocab.n {
        return Err(ModelError::Mismatch(format!("graph has {} nodes, model vocabulary {}", graph.n(), vocab.n)));
    }
    let max_steps = opts.max_len.min(bundle.config.block_size - 1);
    let mut out: Vec<Rollout> = pairs
        .iter()
        .map(|&(s, g)| Rollout {
            start: s,
            goal: g,
            nodes: vec![s],
            tokens: vec![vocab.node(s), vocab.node(g)],
            reached_goal: s == g,
            first_illegal: None,
            out_of_range: false,
            perturbed_steps: 0,
            dists: Vec::new(),
        })
        .collect();
    let mut rngs: Vec<rng::Rng> = (0..pairs.len()).map(|i| rng::stream(opts.seed, "generate", &[i as u64])).collect();
    let inc = vocab.increments();

    for chunk_start in (0..pairs.len()).step_by(opts.chunk.max(1)) {
        let chunk_end = (chunk_start + opts.chunk.max(1)).min(pairs.len());
        let mut active: Vec<usize> = (chunk_start..chunk_end).filter(|&i| !out[i].reached_goal).collect();
        let mut step = 0;
        while !active.is_empty() && step < max_steps {
            let seqs: Vec<&[usize]> = active.iter().map(|&i| out[i].tokens.as_slice()).collect();
            let batch = Batch::new(&seqs, vocab.pad())?;
            let mut tape = Tape::new();
            let pv = register(&mut tape, bundle, false);
            let bb = backbone(&mut tape, bundle, &pv, &batch, None, false)?;
            let t = batch.len;
            let d = bundle.config.d_model;
            let flat = tape.reshape(bb.hidden, &[batch.rows * t, d])?;
            let last: Vec<usize> = (0..batch.rows).map(|r| r * t + t - 1).collect();
            let rows = tape.gather_rows(flat, &last)?;
            let logits = head(&mut tape, bundle, &pv, rows)?;
            let v = vocab.size();
            let z = tape.data(logits);

            let mut still = Vec::with_capacity(active.len());
            for (r, &i) in active.iter().enumerate() {
                let row = &z[r * v..(r + 1) * v];
                let ro = &mut out[i];
                if opts.keep_dists {
                    let mut p: Vec<f64> = row.iter().map(|x| x.as_f64()).collect();
                    crate::tensor::softmax_in_place(&mut p);
                    ro.dists.push(p);
                }
                let mut best = inc.start;
                for tok in inc.clone() {
                    if row[tok] > row[best] {
                        best = tok;
                    }
                }
                let cur = *ro.nodes.last().unwrap();
                let draw = rngs[i].random::<f64>();
                if draw < opts.perturb_p {
                    let alts: Vec<usize> = graph
                        .neighbors(cur)
                        .iter()
                        .map(|&nb| vocab.encode_offset(nb as i64 - cur as i64).expect("in-range offset"))
                        .filter(|&tok| tok != best)
                        .collect();
                    if let Some(&alt) = alts.choose(&mut rngs[i]) {
                        best = alt;
                        ro.perturbed_steps += 1;
                    }
                }
                ro.tokens.push(best);
                let next = cur as i64 + vocab.decode_offset(best).expect("increment token");
                if next < 0 || next >= vocab.n as i64 {
                    ro.first_illegal = Some(step);
                    ro.out_of_range = true;
                    continue;
                }
                let next = next as usize;
                ro.nodes.push(next);
                if !graph.has_edge(cur, next) {
                    ro.first_illegal = Some(step);
                    continue;
                }
                if next == ro.goal {
                    ro.reached_goal = true;
                    continue;
                }
                still.push(i);
            }
            active = still;
            step += 1;
        }
    }
    Ok(out)
}
