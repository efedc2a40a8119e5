use std::collections::{BTreeMap, HashSet};
use std::hash::Hash;

use rand::Rng as _;

use crate::rng::Rng;

/// Enumerating every candidate pair is only attempted below this many.
const ENUMERATION_LIMIT: u64 = 50_000_000;

/// Pairs drawn by [`mine_pairs`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mined {
    /// Distinct unordered pairs `(i, j)` with `i < j`.
    pub pairs: Vec<(usize, usize)>,
    pub requested: usize,
    /// Groups with at least two members.
    pub groups: usize,
    /// The sampler ran out of fresh pairs and fell back to enumeration.
    pub exhausted: bool,
}

impl Mined {
    pub fn starved(&self) -> bool {
        self.pairs.len() < self.requested
    }
}

/// Draws up to `n` distinct pairs of items that share a key and satisfy
/// `eligible`, without replacement. A group is chosen with probability
/// proportional to its number of member pairs, then two members uniformly,
/// so every same-key pair is equally likely before the eligibility filter.
/// Items whose key is `None` never pair. When rejection sampling stalls,
/// all eligible pairs are enumerated and sampled exactly; fewer than `n` are
/// returned only if fewer exist.
pub fn mine_pairs<K, F, E>(items: usize, key: F, eligible: E, n: usize, rng: &mut Rng) -> Mined
where
    K: Hash + Ord,
    F: Fn(usize) -> Option<K>,
    E: Fn(usize, usize) -> bool,
{
    let mut by_key: BTreeMap<K, Vec<usize>> = BTreeMap::new();
    for i in 0..items {
        if let Some(k) = key(i) {
            by_key.entry(k).or_default().push(i);
        }
    }
    let groups: Vec<Vec<usize>> = by_key.into_values().filter(|g| g.len() >= 2).collect();
    let weights: Vec<u64> = groups.iter().map(|g| (g.len() as u64) * (g.len() as u64 - 1) / 2).collect();
    let total: u64 = weights.iter().sum();
    let mut out = Mined { pairs: Vec::new(), requested: n, groups: groups.len(), exhausted: false };
    if total == 0 || n == 0 {
        return out;
    }
    let cumulative: Vec<u64> = weights
        .iter()
        .scan(0u64, |acc, &w| {
            *acc += w;
            Some(*acc)
        })
        .collect();

    let mut seen: HashSet<(usize, usize)> = HashSet::new();
    let mut misses = 0usize;
    let patience = 64 + 8 * n;
    while out.pairs.len() < n && misses < patience {
        let u = rng.random_range(0..total);
        let g = &groups[cumulative.partition_point(|&c| c <= u)];
        let a = rng.random_range(0..g.len());
        let mut b = rng.random_range(0..g.len() - 1);
        if b >= a {
            b += 1;
        }
        let p = (g[a].min(g[b]), g[a].max(g[b]));
        if seen.contains(&p) || !eligible(p.0, p.1) {
            misses += 1;
            continue;
        }
        seen.insert(p);
        out.pairs.push(p);
    }
    if out.pairs.len() < n && total <= ENUMERATION_LIMIT {
        out.exhausted = true;
        let mut rest: Vec<(usize, usize)> = Vec::new();
        for g in &groups {
            for (x, &i) in g.iter().enumerate() {
                for &j in &g[x + 1..] {
                    let p = (i.min(j), i.max(j));
                    if !seen.contains(&p) && eligible(p.0, p.1) {
                        rest.push(p);
                    }
                }
            }
        }
        let need = (n - out.pairs.len()).min(rest.len());
        for i in rand::seq::index::sample(rng, rest.len(), need) {
            out.pairs.push(rest[i]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;

    #[test]
    fn starved_classes_report_what_exists() {
        // keys: 0 0 0 1 1 -> four same-key pairs in total
        let keys = [0, 0, 0, 1, 1];
        let m = mine_pairs(5, |i| Some(keys[i]), |_, _| true, 10, &mut stream(1, "t", &[]));
        assert_eq!(m.pairs.len(), 4);
        assert!(m.starved() && m.exhausted);
        let mut got = m.pairs.clone();
        got.sort();
        assert_eq!(got, vec![(0, 1), (0, 2), (1, 2), (3, 4)]);
    }

    #[test]
    fn none_keys_never_pair() {
        let m = mine_pairs(6, |i| (i % 2 == 0).then_some(()), |_, _| true, 100, &mut stream(1, "t", &[]));
        assert_eq!(m.pairs.len(), 3);
        assert!(m.pairs.iter().all(|&(i, j)| i % 2 == 0 && j % 2 == 0));
    }

    #[test]
    fn group_choice_is_pair_weighted() {
        // group A has 2 members (1 pair), group B has 10 (45 pairs)
        let key = |i: usize| Some(usize::from(i >= 2));
        let mut a = 0;
        for s in 0..400 {
            let m = mine_pairs(12, key, |_, _| true, 1, &mut stream(s, "w", &[]));
            a += usize::from(m.pairs[0] == (0, 1));
        }
        // expected 400 / 46 ≈ 8.7
        assert!((2..=20).contains(&a), "{a}");
    }

    proptest! {
        #[test]
        fn pairs_are_distinct_and_satisfy_the_predicate(
            keys in proptest::collection::vec(0u8..4, 2..40),
            n in 1usize..60,
            seed in 0u64..1000,
        ) {
            let elig = |i: usize, j: usize| !(i + j).is_multiple_of(3);
            let m = mine_pairs(keys.len(), |i| Some(keys[i]), elig, n, &mut stream(seed, "p", &[]));
            let set: HashSet<_> = m.pairs.iter().copied().collect();
            prop_assert_eq!(set.len(), m.pairs.len());
            for &(i, j) in &m.pairs {
                prop_assert!(i < j && keys[i] == keys[j] && elig(i, j));
            }
            let exist = (0..keys.len())
                .flat_map(|i| (i + 1..keys.len()).map(move |j| (i, j)))
                .filter(|&(i, j)| keys[i] == keys[j] && elig(i, j))
                .count();
            prop_assert_eq!(m.pairs.len(), n.min(exist));
        }
    }
}
