use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::dump::{annotate, evaluate, positions};
use super::pairs::mine_pairs;
use super::{DumpRecord, ProbeError, ProbeReport};
use crate::model::ModelBundle;
use crate::rng;
use crate::tensor::Scalar;
use crate::trajgen::TrajectoryCorpus;

/// Mean squared distance of a fixed pair set across checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractivityTrace {
    pub k: usize,
    pub pairs: usize,
    pub iters: Vec<usize>,
    pub distance: Vec<f64>,
    /// Least-squares slope of distance against iteration.
    pub slope: f64,
    /// Final over initial distance.
    pub ratio: f64,
}

impl ContractivityTrace {
    pub fn to_report(&self) -> ProbeReport {
        ProbeReport::new(format!("contractivity_ratio_k{}", self.k), self.ratio, self.pairs, 0.0)
            .with_extra("slope", self.slope)
            .with_extra("initial", self.distance.first().copied().unwrap_or(f64::NAN))
            .with_extra("final", self.distance.last().copied().unwrap_or(f64::NAN))
            .with_config("k", self.k)
    }
}

/// Sampled records and the index pairs into them.
pub type PairSet = (Vec<DumpRecord>, Vec<(usize, usize)>);

/// Token-level `k`-step-equivalent cross-trajectory pairs over positions of
/// `n_traj` sampled training trajectories. Mined from annotations alone, so
/// the set is the same for every checkpoint.
pub fn contractivity_pairs(corpus: &TrajectoryCorpus, n_traj: usize, k: usize, pairs_n: usize, seed: u64) -> Result<PairSet, ProbeError> {
    let total = corpus.train.len();
    let mut r = rng::stream(seed, "probe/contractivity", &[k as u64]);
    let mut trajs = index::sample(&mut r, total, n_traj.min(total)).into_vec();
    trajs.sort_unstable();
    let recs = annotate(corpus, &trajs, k);
    let m = mine_pairs(
        recs.len(),
        |i| recs[i].future_token(k),
        |i, j| recs[i].traj != recs[j].traj && recs[i].next_token != recs[j].next_token,
        pairs_n,
        &mut r,
    );
    if m.pairs.is_empty() {
        return Err(ProbeError::Starved { metric: "contractivity_trace", what: format!("k={k} pairs") });
    }
    Ok((recs, m.pairs))
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// `mean ‖h₁ − h₂‖²` over the pairs, using unnormalized final-layer states,
/// at each `(iteration, bundle)` checkpoint.
pub fn contractivity_trace<S: Scalar>(
    checkpoints: &[(usize, &ModelBundle<S>)],
    corpus: &TrajectoryCorpus,
    records: &[DumpRecord],
    pairs: &[(usize, usize)],
    k: usize,
) -> Result<ContractivityTrace, ProbeError> {
    if checkpoints.is_empty() || pairs.is_empty() {
        return Err(ProbeError::Starved { metric: "contractivity_trace", what: "checkpoints or pairs".into() });
    }
    let at = positions(records);
    let mut distance = Vec::with_capacity(checkpoints.len());
    for (_, bundle) in checkpoints {
        let d = bundle.config.d_model;
        let (h, _) = evaluate(bundle, corpus, &at, false, false)?;
        let sq: f64 = pairs
            .iter()
            .map(|&(i, j)| h[i * d..(i + 1) * d].iter().zip(&h[j * d..(j + 1) * d]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .sum();
        distance.push(sq / pairs.len() as f64);
    }
    let iters: Vec<usize> = checkpoints.iter().map(|c| c.0).collect();
    let xs: Vec<f64> = iters.iter().map(|&i| i as f64).collect();
    Ok(ContractivityTrace {
        k,
        pairs: pairs.len(),
        slope: slope(&xs, &distance),
        ratio: distance[distance.len() - 1] / distance[0],
        iters,
        distance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probes::dump::tests::fixture;

    #[test]
    fn frozen_model_gives_a_flat_trace() {
        let (_, corpus, bundle) = fixture();
        let (recs, pairs) = contractivity_pairs(&corpus, 40, 2, 50, 1).unwrap();
        let t = contractivity_trace(&[(0, &bundle), (10, &bundle), (20, &bundle)], &corpus, &recs, &pairs, 2).unwrap();
        assert_eq!(t.distance[0], t.distance[2]);
        assert_eq!(t.slope, 0.0);
        assert_eq!(t.ratio, 1.0);
        for &(i, j) in &pairs {
            assert_eq!(recs[i].future_token(2), recs[j].future_token(2));
            assert_ne!(recs[i].next_token, recs[j].next_token);
        }
    }

    #[test]
    fn identical_pairs_have_zero_distance() {
        let (_, corpus, bundle) = fixture();
        let (recs, _) = contractivity_pairs(&corpus, 10, 2, 5, 1).unwrap();
        let t = contractivity_trace(&[(0, &bundle)], &corpus, &recs, &[(0, 0), (3, 3)], 2).unwrap();
        assert_eq!(t.distance, vec![0.0]);
    }

    #[test]
    fn slope_of_a_line() {
        assert!((slope(&[0.0, 1.0, 2.0, 3.0], &[5.0, 3.0, 1.0, -1.0]) + 2.0).abs() < 1e-12);
    }
}
