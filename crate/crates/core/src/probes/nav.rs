use serde::{Deserialize, Serialize};

use super::{ProbeError, ProbeReport};
use crate::graphgen::Graph;
use crate::model::{generate_many, GenerateOptions, ModelBundle, Rollout};
use crate::tensor::Scalar;

/// Outcome counts of greedy decoding over a set of start/goal pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavReport {
    pub n: usize,
    pub success: usize,
    pub disconnection: usize,
    pub wrong_target: usize,
    pub perturb_p: f64,
}

impl NavReport {
    /// Classifies each rollout: any illegal move is a disconnection; a legal
    /// walk is a success when it reached the goal, otherwise a wrong target.
    pub fn from_rollouts(rollouts: &[Rollout], perturb_p: f64) -> Self {
        let mut r = NavReport { n: rollouts.len(), success: 0, disconnection: 0, wrong_target: 0, perturb_p };
        for ro in rollouts {
            if ro.first_illegal.is_some() {
                r.disconnection += 1;
            } else if ro.reached_goal {
                r.success += 1;
            } else {
                r.wrong_target += 1;
            }
        }
        r
    }

    fn rate(&self, c: usize) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            c as f64 / self.n as f64
        }
    }

    pub fn success_rate(&self) -> f64 {
        self.rate(self.success)
    }

    pub fn disconnection_rate(&self) -> f64 {
        self.rate(self.disconnection)
    }

    pub fn wrong_target_rate(&self) -> f64 {
        self.rate(self.wrong_target)
    }

    /// The three outcome counts cover every rollout exactly once.
    pub fn partitions(&self) -> bool {
        self.success + self.disconnection + self.wrong_target == self.n
    }

    pub fn to_reports(&self) -> Vec<ProbeReport> {
        let bern = |p: f64| if self.n == 0 { 0.0 } else { (p * (1.0 - p) / self.n as f64).sqrt() };
        let name = |m: &str| if self.perturb_p > 0.0 { format!("detour_{m}") } else { format!("nav_{m}") };
        [("success", self.success), ("disconnection", self.disconnection), ("wrong_target", self.wrong_target)]
            .into_iter()
            .map(|(m, c)| {
                let v = self.rate(c);
                ProbeReport::new(name(m), v, self.n, bern(v)).with_extra("count", c as f64).with_config("perturb_p", self.perturb_p)
            })
            .collect()
    }
}

/// Decodes every pair greedily and tallies the outcomes. With
/// `perturb_p > 0` this measures detour robustness.
pub fn nav_eval<S: Scalar>(
    bundle: &ModelBundle<S>,
    graph: &Graph,
    pairs: &[(usize, usize)],
    perturb_p: f64,
    seed: u64,
) -> Result<NavReport, ProbeError> {
    let opts = GenerateOptions { perturb_p, seed, ..GenerateOptions::default() };
    let rollouts = generate_many(bundle, graph, pairs, &opts)?;
    Ok(NavReport::from_rollouts(&rollouts, perturb_p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probes::dump::tests::fixture;

    fn rollout(reached: bool, illegal: Option<usize>) -> Rollout {
        Rollout {
            start: 0,
            goal: 1,
            nodes: vec![0],
            tokens: vec![],
            reached_goal: reached,
            first_illegal: illegal,
            out_of_range: false,
            perturbed_steps: 0,
            dists: vec![],
        }
    }

    #[test]
    fn outcomes_partition() {
        let rs = vec![
            rollout(true, None),
            rollout(false, Some(2)),
            rollout(false, None),
            rollout(true, None),
            rollout(false, Some(0)),
            rollout(false, None),
            rollout(true, None),
        ];
        let r = NavReport::from_rollouts(&rs, 0.0);
        assert_eq!((r.success, r.disconnection, r.wrong_target), (3, 2, 2));
        assert!(r.partitions());
        assert!((r.success_rate() + r.disconnection_rate() + r.wrong_target_rate() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn untrained_model_rates_sum_to_one() {
        let (g, corpus, bundle) = fixture();
        let r = nav_eval(&bundle, &g, &corpus.test_pairs, 0.0, 0).unwrap();
        assert_eq!(r.n, corpus.test_pairs.len());
        assert!(r.partitions());
    }
}
