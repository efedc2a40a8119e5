use serde::{Deserialize, Serialize};

use super::pairs::{mine_pairs, Mined};
use super::{bootstrap_std, bootstrap_std_diff, mean, HiddenDump, ProbeError, ProbeReport};
use crate::rng;

/// What "same k-step future" means for [`structure_gain`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Equivalence {
    /// Same target token `k` steps ahead, different next token.
    #[default]
    Token,
    /// Same node reached `k` steps ahead, different next node.
    Node,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainReport {
    pub k: usize,
    pub equivalence: Equivalence,
    pub sim_f: f64,
    pub baseline: f64,
    pub gain: f64,
    pub pairs: usize,
    pub baseline_pairs: usize,
    pub requested: usize,
    pub std_sim: f64,
    pub std_gain: f64,
}

impl GainReport {
    pub fn to_report(&self) -> ProbeReport {
        ProbeReport::new(format!("structure_gain_k{}", self.k), self.gain, self.pairs, self.std_gain)
            .with_extra("sim_f", self.sim_f)
            .with_extra("baseline", self.baseline)
            .with_extra("pairs_requested", self.requested as f64)
            .with_extra("baseline_pairs", self.baseline_pairs as f64)
            .with_config("k", self.k)
            .with_config("equivalence", format!("{:?}", self.equivalence).to_lowercase())
    }
}

fn cosines(dump: &HiddenDump, m: &Mined) -> Vec<f64> {
    m.pairs.iter().map(|&(i, j)| dump.cosine(i, j)).collect()
}

/// Mean cosine of random cross-trajectory pairs among records kept by `pool`.
fn random_pairs(dump: &HiddenDump, pool: impl Fn(usize) -> bool, n: usize, seed: u64, tag: &str) -> Vec<f64> {
    let recs = &dump.records;
    let mut r = rng::stream(seed, "probe/baseline", &[rng::derive_seed(0, tag, &[])]);
    let m = mine_pairs(recs.len(), |i| pool(i).then_some(()), |i, j| recs[i].traj != recs[j].traj, n, &mut r);
    cosines(dump, &m)
}

/// Mean cosine of `k`-step-equivalent cross-trajectory pairs minus the mean
/// cosine of random cross-trajectory pairs drawn from the same positions.
pub fn structure_gain(dump: &HiddenDump, k: usize, pairs_n: usize, seed: u64, equivalence: Equivalence) -> Result<GainReport, ProbeError> {
    if k < 2 || k > dump.meta.k_eval {
        return Err(ProbeError::Mismatch(format!("k = {k} outside 2..={}", dump.meta.k_eval)));
    }
    let recs = &dump.records;
    let mut r = rng::stream(seed, "probe/structure_gain", &[k as u64]);
    let m = match equivalence {
        Equivalence::Token => mine_pairs(
            recs.len(),
            |i| recs[i].future_token(k),
            |i, j| recs[i].traj != recs[j].traj && recs[i].next_token != recs[j].next_token,
            pairs_n,
            &mut r,
        ),
        Equivalence::Node => mine_pairs(
            recs.len(),
            |i| recs[i].future_node(k),
            |i, j| recs[i].traj != recs[j].traj && recs[i].next_node != recs[j].next_node,
            pairs_n,
            &mut r,
        ),
    };
    if m.pairs.is_empty() {
        return Err(ProbeError::Starved { metric: "structure_gain", what: format!("k={k} pairs") });
    }
    let sims = cosines(dump, &m);
    let base = random_pairs(dump, |i| recs[i].future_token(k).is_some(), pairs_n, seed, &format!("gain{k}"));
    let tag = format!("gain{k}");
    let (sim_f, baseline) = (mean(&sims), mean(&base));
    Ok(GainReport {
        k,
        equivalence,
        sim_f,
        baseline,
        gain: sim_f - baseline,
        pairs: sims.len(),
        baseline_pairs: base.len(),
        requested: pairs_n,
        std_sim: bootstrap_std(&sims, seed, &tag),
        std_gain: bootstrap_std_diff(&sims, &base, seed, &tag),
    })
}

/// Goal / next-node agreement of a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BeliefCondition {
    SameGoalSameNext,
    SameGoalDiffNext,
    DiffGoalSameNext,
    DiffGoalDiffNext,
}

impl BeliefCondition {
    pub const ALL: [BeliefCondition; 4] = [
        BeliefCondition::SameGoalSameNext,
        BeliefCondition::SameGoalDiffNext,
        BeliefCondition::DiffGoalSameNext,
        BeliefCondition::DiffGoalDiffNext,
    ];

    pub fn label(self) -> &'static str {
        match self {
            BeliefCondition::SameGoalSameNext => "G=P=",
            BeliefCondition::SameGoalDiffNext => "G=P!=",
            BeliefCondition::DiffGoalSameNext => "G!=P=",
            BeliefCondition::DiffGoalDiffNext => "G!=P!=",
        }
    }
}

/// Mean cosine over cross-trajectory pairs in one goal / next-node
/// condition. Pairs sharing the next node must differ in their next token.
pub fn belief_compression(dump: &HiddenDump, cond: BeliefCondition, pairs_n: usize, seed: u64) -> Result<ProbeReport, ProbeError> {
    use BeliefCondition::*;
    let recs = &dump.records;
    let mut r = rng::stream(seed, "probe/belief", &[cond as u64]);
    let cross = |i: usize, j: usize| recs[i].traj != recs[j].traj;
    let action_differs = |i: usize, j: usize| recs[i].next_token != recs[j].next_token;
    let n = recs.len();
    let m = match cond {
        SameGoalSameNext => {
            mine_pairs(n, |i| Some((recs[i].goal, recs[i].next_node)), |i, j| cross(i, j) && action_differs(i, j), pairs_n, &mut r)
        }
        SameGoalDiffNext => {
            mine_pairs(n, |i| Some(recs[i].goal), |i, j| cross(i, j) && recs[i].next_node != recs[j].next_node, pairs_n, &mut r)
        }
        DiffGoalSameNext => mine_pairs(
            n,
            |i| Some(recs[i].next_node),
            |i, j| cross(i, j) && recs[i].goal != recs[j].goal && action_differs(i, j),
            pairs_n,
            &mut r,
        ),
        DiffGoalDiffNext => mine_pairs(
            n,
            |_| Some(()),
            |i, j| cross(i, j) && recs[i].goal != recs[j].goal && recs[i].next_node != recs[j].next_node,
            pairs_n,
            &mut r,
        ),
    };
    if m.pairs.is_empty() {
        return Err(ProbeError::Starved { metric: "belief_compression", what: format!("{} pairs", cond.label()) });
    }
    let sims = cosines(dump, &m);
    Ok(ProbeReport::new(format!("belief_{}", cond.label()), mean(&sims), sims.len(), bootstrap_std(&sims, seed, cond.label()))
        .with_extra("pairs_requested", pairs_n as f64)
        .with_config("condition", cond.label()))
}

/// Mean cosine of random cross-trajectory pairs over the whole dump.
pub fn random_baseline(dump: &HiddenDump, pairs_n: usize, seed: u64) -> Result<ProbeReport, ProbeError> {
    let sims = random_pairs(dump, |_| true, pairs_n, seed, "random");
    if sims.is_empty() {
        return Err(ProbeError::Starved { metric: "random_baseline", what: "pairs".into() });
    }
    Ok(ProbeReport::new("belief_baseline", mean(&sims), sims.len(), bootstrap_std(&sims, seed, "random"))
        .with_extra("pairs_requested", pairs_n as f64))
}

/// Mean cosine of cross-trajectory pairs at the same node with the same goal.
pub fn statewise_similarity(dump: &HiddenDump, pairs_n: usize, seed: u64) -> Result<ProbeReport, ProbeError> {
    let recs = &dump.records;
    let mut r = rng::stream(seed, "probe/statewise", &[]);
    let m = mine_pairs(recs.len(), |i| Some((recs[i].current, recs[i].goal)), |i, j| recs[i].traj != recs[j].traj, pairs_n, &mut r);
    if m.pairs.is_empty() {
        return Err(ProbeError::Starved { metric: "statewise_similarity", what: "same node and goal pairs".into() });
    }
    let sims = cosines(dump, &m);
    Ok(ProbeReport::new("statewise_similarity", mean(&sims), sims.len(), bootstrap_std(&sims, seed, "statewise"))
        .with_extra("pairs_requested", pairs_n as f64))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::probes::DumpRecord;
    use crate::trajgen::Source;
    use rand_distr::{Distribution, StandardNormal};

    pub(crate) fn rec(traj: usize, current: usize, goal: usize, next_node: usize, next_token: usize, fut: &[usize]) -> DumpRecord {
        DumpRecord {
            traj,
            pos: 1,
            source: Source::Shortest,
            start: current,
            goal,
            current,
            next_node,
            next_token,
            future_tokens: std::iter::once(next_token).chain(fut.iter().copied()).collect(),
            future_nodes: std::iter::once(next_node).chain(fut.iter().map(|_| 0)).collect(),
        }
    }

    /// Six records over one-hot-ish vectors; three trajectories.
    fn six() -> HiddenDump {
        let recs = vec![
            rec(0, 1, 9, 2, 20, &[30]),
            rec(0, 2, 9, 3, 21, &[31]),
            rec(1, 4, 9, 5, 22, &[30]),
            rec(1, 5, 8, 6, 20, &[31]),
            rec(2, 7, 8, 8, 23, &[30]),
            rec(2, 1, 9, 2, 21, &[31]),
        ];
        let raw = [
            1.0, 0.0, 0.0, 0.0, //
            0.0, 1.0, 0.0, 0.0, //
            1.0, 1.0, 0.0, 0.0, //
            0.0, 1.0, 1.0, 0.0, //
            1.0, 0.0, 0.0, 1.0, //
            0.0, 0.0, 1.0, 1.0,
        ];
        HiddenDump::from_parts(recs, 4, &raw, None).unwrap()
    }

    fn brute(dump: &HiddenDump, pred: impl Fn(usize, usize) -> bool) -> f64 {
        let mut s = Vec::new();
        for i in 0..dump.len() {
            for j in i + 1..dump.len() {
                if pred(i, j) {
                    let (a, b) = (dump.vector(i), dump.vector(j));
                    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                    s.push(dot);
                }
            }
        }
        s.iter().sum::<f64>() / s.len() as f64
    }

    #[test]
    fn gain_on_the_six_vector_fixture_matches_brute_force() {
        let d = six();
        let g = structure_gain(&d, 2, 1000, 4, Equivalence::Token).unwrap();
        let r = &d.records;
        let want_f = brute(&d, |i, j| {
            r[i].traj != r[j].traj && r[i].future_tokens[1] == r[j].future_tokens[1] && r[i].next_token != r[j].next_token
        });
        let want_b = brute(&d, |i, j| r[i].traj != r[j].traj);
        assert!((g.sim_f - want_f).abs() < 1e-12);
        assert!((g.baseline - want_b).abs() < 1e-12);
        assert!((g.gain - (want_f - want_b)).abs() < 1e-12);
        // token 30: (0,2), (0,4), (2,4); token 31: (1,3), (3,5), while (1,5)
        // share their next token
        assert_eq!(g.pairs, 5);
    }

    #[test]
    fn identical_vectors_give_zero_gain() {
        let mut d = six();
        let v = d.vector(0).to_vec();
        for i in 0..d.len() {
            d.vectors[i * 4..(i + 1) * 4].copy_from_slice(&v);
        }
        let g = structure_gain(&d, 2, 100, 1, Equivalence::Token).unwrap();
        assert!((g.sim_f - 1.0).abs() < 1e-12 && (g.baseline - 1.0).abs() < 1e-12 && g.gain.abs() < 1e-12);
    }

    #[test]
    fn belief_conditions_match_brute_force() {
        let d = six();
        let r = &d.records;
        let cross = |i: usize, j: usize| r[i].traj != r[j].traj;
        let got = belief_compression(&d, BeliefCondition::SameGoalDiffNext, 1000, 2).unwrap();
        let want = brute(&d, |i, j| cross(i, j) && r[i].goal == r[j].goal && r[i].next_node != r[j].next_node);
        assert!((got.value - want).abs() < 1e-12);
        let got = belief_compression(&d, BeliefCondition::DiffGoalDiffNext, 1000, 2).unwrap();
        let want = brute(&d, |i, j| cross(i, j) && r[i].goal != r[j].goal && r[i].next_node != r[j].next_node);
        assert!((got.value - want).abs() < 1e-12);
        // records 0 and 5 share goal and next node with different actions
        let got = belief_compression(&d, BeliefCondition::SameGoalSameNext, 1000, 2).unwrap();
        assert_eq!(got.n, 1);
        assert!((got.value - d.cosine(0, 5)).abs() < 1e-12);
        let s = statewise_similarity(&d, 100, 2).unwrap();
        assert_eq!(s.n, 1);
        assert!((s.value - d.cosine(0, 5)).abs() < 1e-12);
    }

    #[test]
    fn p_equal_conditions_skip_identical_actions() {
        let recs = vec![rec(0, 1, 9, 2, 20, &[30]), rec(1, 1, 9, 2, 20, &[30])];
        let d = HiddenDump::from_parts(recs, 2, &[1.0, 0.0, 0.0, 1.0], None).unwrap();
        assert!(matches!(belief_compression(&d, BeliefCondition::SameGoalSameNext, 10, 1), Err(ProbeError::Starved { .. })));
    }

    #[test]
    fn random_unit_vectors_are_nearly_orthogonal() {
        let dim = 256;
        let n = 400;
        let mut rg = rng::stream(3, "iso", &[]);
        let recs: Vec<DumpRecord> = (0..n).map(|i| rec(i, i % 50, i % 37, (i + 1) % 50, 20 + i % 5, &[30])).collect();
        let raw: Vec<f64> = (0..n * dim).map(|_| StandardNormal.sample(&mut rg)).collect();
        let d = HiddenDump::from_parts(recs, dim, &raw, None).unwrap();
        let pairs_n = 2000;
        let got = belief_compression(&d, BeliefCondition::DiffGoalDiffNext, pairs_n, 5).unwrap();
        assert!(got.value.abs() < 3.0 / ((pairs_n * dim) as f64).sqrt(), "{}", got.value);
    }

    #[test]
    fn gain_is_rotation_invariant() {
        let d = six();
        // rotate by a fixed orthogonal matrix (Givens rotations on planes 0-1 and 2-3)
        let (c, s) = (0.6f64, 0.8f64);
        let mut rot = d.clone();
        for i in 0..d.len() {
            let v = d.vector(i);
            let w = [c * v[0] - s * v[1], s * v[0] + c * v[1], c * v[2] + s * v[3], -s * v[2] + c * v[3]];
            rot.vectors[i * 4..(i + 1) * 4].copy_from_slice(&w);
        }
        let a = structure_gain(&d, 2, 50, 8, Equivalence::Token).unwrap();
        let b = structure_gain(&rot, 2, 50, 8, Equivalence::Token).unwrap();
        assert!((a.gain - b.gain).abs() < 1e-6);
    }
}
