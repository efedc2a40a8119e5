use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{index, IndexedRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::dump::evaluate;
use super::{bootstrap_std, mean, ProbeError, ProbeReport};
use crate::graphgen::Graph;
use crate::model::ModelBundle;
use crate::rng;
use crate::tensor::Scalar;
use crate::trajgen::TrajectoryCorpus;

/// One evaluation context: the walker at `node` after `tokens[..=pos]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IspContext {
    pub traj: usize,
    pub pos: usize,
    pub node: usize,
    /// The legal next action `tokens[pos + 1]`.
    pub action: usize,
    /// Horizon of the shared future token.
    pub j: usize,
    pub future: usize,
    /// An action seen before `future` in the corpus that is illegal here.
    pub shortcut: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IspReport {
    pub isp: f64,
    pub legal_prob: f64,
    pub isp_std: f64,
    pub legal_std: f64,
    /// Contexts with an illegal shortcut candidate.
    pub contexts: usize,
    /// Contexts without one (excluded from `isp`, kept in `legal_prob`).
    pub skipped: usize,
    pub requested: usize,
}

impl IspReport {
    pub fn to_reports(&self) -> Vec<ProbeReport> {
        vec![
            ProbeReport::new("isp", self.isp, self.contexts, self.isp_std)
                .with_extra("skipped", self.skipped as f64)
                .with_extra("samples_requested", self.requested as f64),
            ProbeReport::new("legal_prob", self.legal_prob, self.contexts + self.skipped, self.legal_std),
        ]
    }
}

/// For every training position and every horizon `j` in `window`, records
/// that the action `tokens[p + 1]` was followed by `tokens[p + j]`.
/// Returns `future token -> actions`.
pub fn future_action_map(corpus: &TrajectoryCorpus, window: (usize, usize)) -> BTreeMap<usize, BTreeSet<usize>> {
    let mut map: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for tr in &corpus.train {
        let len = tr.len_tokens();
        for p in 1..len.saturating_sub(1) {
            for j in window.0..=window.1 {
                if p + j < len {
                    map.entry(tr.tokens[p + j]).or_default().insert(tr.tokens[p + 1]);
                }
            }
        }
    }
    map
}

/// Draws up to `samples_n` training positions without replacement, a
/// horizon per position, and a shortcut candidate where one exists.
pub fn isp_contexts(
    corpus: &TrajectoryCorpus,
    graph: &Graph,
    samples_n: usize,
    window: (usize, usize),
    seed: u64,
) -> Result<Vec<IspContext>, ProbeError> {
    if window.0 < 2 || window.1 < window.0 {
        return Err(ProbeError::Mismatch(format!("horizon window {window:?} must satisfy 2 <= lo <= hi")));
    }
    let vocab = corpus.vocab;
    let map = future_action_map(corpus, window);
    let pool: Vec<(usize, usize)> =
        corpus.train.iter().enumerate().flat_map(|(t, tr)| (1..(tr.len_tokens()).saturating_sub(window.0)).map(move |p| (t, p))).collect();
    if pool.is_empty() {
        return Err(ProbeError::Starved { metric: "isp", what: "contexts".into() });
    }
    let mut r = rng::stream(seed, "probe/isp", &[]);
    let mut picks = index::sample(&mut r, pool.len(), samples_n.min(pool.len())).into_vec();
    picks.sort_unstable();
    let mut out = Vec::with_capacity(picks.len());
    for i in picks {
        let (t, pos) = pool[i];
        let tr = &corpus.train[t];
        let len = tr.len_tokens();
        let j = r.random_range(window.0..=window.1.min(len - 1 - pos));
        let node = tr.nodes[pos - 1];
        let action = tr.tokens[pos + 1];
        let future = tr.tokens[pos + j];
        let candidates: Vec<usize> = map[&future]
            .iter()
            .copied()
            .filter(|&a| a != action)
            .filter(|&a| match vocab.decode_offset(a) {
                Some(off) if off != 0 => {
                    let w = node as i64 + off;
                    (0..vocab.n as i64).contains(&w) && !graph.has_edge(node, w as usize)
                }
                _ => false,
            })
            .collect();
        out.push(IspContext { traj: t, pos, node, action, j, future, shortcut: candidates.choose(&mut r).copied() });
    }
    Ok(out)
}

/// Scores contexts against next-token distributions (`probs(i)` is the full
/// vocabulary distribution at context `i`).
pub fn score_contexts<'a>(
    contexts: &[IspContext],
    graph: &Graph,
    vocab: crate::trajgen::Vocabulary,
    probs: impl Fn(usize) -> &'a [f64],
    requested: usize,
    seed: u64,
) -> IspReport {
    let mut isp = Vec::new();
    let mut legal = Vec::with_capacity(contexts.len());
    for (i, c) in contexts.iter().enumerate() {
        let p = probs(i);
        legal.push(graph.neighbors(c.node).iter().map(|&w| p[vocab.encode_offset(w as i64 - c.node as i64).unwrap()]).sum());
        if let Some(a) = c.shortcut {
            isp.push(p[a]);
        }
    }
    IspReport {
        isp: mean(&isp),
        legal_prob: mean(&legal),
        isp_std: bootstrap_std(&isp, seed, "isp"),
        legal_std: bootstrap_std(&legal, seed, "legal"),
        contexts: isp.len(),
        skipped: contexts.len() - isp.len(),
        requested,
    }
}

/// Illegal-shortcut probability and legal mass of the next-token head.
pub fn isp_probe<S: Scalar>(
    bundle: &ModelBundle<S>,
    corpus: &TrajectoryCorpus,
    graph: &Graph,
    samples_n: usize,
    window: (usize, usize),
    seed: u64,
) -> Result<IspReport, ProbeError> {
    if bundle.vocab != corpus.vocab || graph.n() != corpus.vocab.n {
        return Err(ProbeError::Mismatch("model, corpus and graph disagree on the node count".into()));
    }
    let contexts = isp_contexts(corpus, graph, samples_n, window, seed)?;
    let at: Vec<(usize, usize)> = contexts.iter().map(|c| (c.traj, c.pos)).collect();
    let (_, probs) = evaluate(bundle, corpus, &at, false, true)?;
    let probs = probs.expect("distributions requested");
    let v = bundle.vocab.size();
    let report = score_contexts(&contexts, graph, bundle.vocab, |i| &probs[i * v..(i + 1) * v], samples_n, seed);
    if report.contexts == 0 {
        return Err(ProbeError::Starved { metric: "isp", what: "illegal shortcut candidates".into() });
    }
    Ok(report)
}
