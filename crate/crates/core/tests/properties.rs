//! Property checks on generators, path search, corpora and the linear lab.

use std::collections::{BTreeSet, VecDeque};

use proptest::prelude::*;

use mtplab::graphgen::{generate_er, generate_usg, reachable_pairs, Graph};
use mtplab::linlab::{coupling_grid, LinearConfig};
use mtplab::model::Rollout;
use mtplab::probes::NavReport;
use mtplab::rng;
use mtplab::tensor::softmax_in_place;
use mtplab::trajgen::{decode, is_legal_path, k_shortest, CorpusParams, TrajectoryCorpus};

fn edge_set(g: &Graph) -> BTreeSet<(usize, usize)> {
    g.edges().iter().copied().collect()
}

fn acyclic(g: &Graph) -> bool {
    let mut indeg = vec![0usize; g.n()];
    for &(_, v) in g.edges() {
        indeg[v] += 1;
    }
    let mut queue: VecDeque<usize> = (0..g.n()).filter(|&u| indeg[u] == 0).collect();
    let mut seen = 0;
    while let Some(u) = queue.pop_front() {
        seen += 1;
        for &v in g.neighbors(u) {
            indeg[v] -= 1;
            if indeg[v] == 0 {
                queue.push_back(v);
            }
        }
    }
    seen == g.n()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn street_graphs_are_symmetric_and_connected(n in 3usize..60, rho in 0.0f64..1.0, seed in 0u64..10_000) {
        let g = generate_usg(n, rho, seed).unwrap();
        let e = edge_set(&g);
        prop_assert_eq!(e.len(), g.edges().len());
        for &(u, v) in &e {
            prop_assert!(u != v && u < n && v < n);
            prop_assert!(e.contains(&(v, u)));
        }
        prop_assert_eq!(reachable_pairs(&g).len(), n * (n - 1));
        prop_assert_eq!(generate_usg(n, rho, seed).unwrap().content_hash(), g.content_hash());
    }

    #[test]
    fn random_graphs_are_simple_and_dags_acyclic(n in 2usize..60, p in 0.0f64..0.6, seed in 0u64..10_000) {
        let g = generate_er(n, p, false, seed).unwrap();
        let e = edge_set(&g);
        prop_assert_eq!(e.len(), g.edges().len());
        prop_assert!(e.iter().all(|&(u, v)| u != v && u < n && v < n));
        let dag = generate_er(n, p, true, seed).unwrap();
        prop_assert!(acyclic(&dag));
    }

    #[test]
    fn k_shortest_paths_are_simple_distinct_and_ordered(n in 3usize..25, seed in 0u64..10_000, k in 1usize..8) {
        let g = generate_er(n, 0.25, false, seed).unwrap();
        let e = edge_set(&g);
        for (s, t) in reachable_pairs(&g).into_iter().take(20) {
            let paths = k_shortest(&g, s, t, k);
            prop_assert!(!paths.is_empty() && paths.len() <= k);
            let distinct: BTreeSet<_> = paths.iter().collect();
            prop_assert_eq!(distinct.len(), paths.len());
            for w in paths.windows(2) {
                prop_assert!((w[0].len(), &w[0]) < (w[1].len(), &w[1]));
            }
            for p in &paths {
                prop_assert_eq!((p[0], *p.last().unwrap()), (s, t));
                prop_assert_eq!(p.iter().collect::<BTreeSet<_>>().len(), p.len());
                prop_assert!(p.windows(2).all(|w| e.contains(&(w[0], w[1]))));
            }
        }
    }

    #[test]
    fn corpus_trajectories_are_legal_walks(n in 6usize..25, seed in 0u64..1_000, p_detour in 0.0f64..1.0, p_rec in 0.0f64..1.0) {
        let g = generate_usg(n, 0.3, seed).unwrap();
        let c = TrajectoryCorpus::build(&g, &CorpusParams { seed, p_detour, p_rec, ..CorpusParams::default() }).unwrap();
        let train: BTreeSet<_> = c.train_pairs.iter().collect();
        prop_assert!(c.test_pairs.iter().all(|p| !train.contains(p)));
        for t in &c.train {
            prop_assert!(is_legal_path(&g, &t.nodes, t.goal));
            prop_assert!(train.contains(&(t.start, t.goal)));
            prop_assert_eq!(t.tokens.len(), c.block_size);
            prop_assert_eq!(&decode(&t.tokens, &c.vocab).unwrap(), &t.nodes);
        }
    }

    #[test]
    fn two_step_cross_weights_never_lag(lr in 0.02f64..0.3, init in 0.0f64..0.2) {
        let grid = coupling_grid(&[lr], &[init], &LinearConfig { steps: 150, ..LinearConfig::default() }).unwrap();
        prop_assert_eq!(grid[0].lagging(), 0);
        prop_assert!(grid[0].strict_from().is_some_and(|s| s <= 3));
    }

    #[test]
    fn softmax_rows_are_distributions(row in proptest::collection::vec(-50.0f64..50.0, 1..40)) {
        let mut r = row.clone();
        softmax_in_place(&mut r);
        prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(r.iter().all(|&p| (0.0..=1.0).contains(&p)));
        let arg = |v: &[f64]| (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b]).then(b.cmp(&a))).unwrap();
        prop_assert_eq!(arg(&r), arg(&row));
    }

    #[test]
    fn navigation_outcomes_partition(flags in proptest::collection::vec((any::<bool>(), any::<bool>()), 0..50)) {
        let rollouts: Vec<Rollout> = flags
            .iter()
            .map(|&(illegal, reached)| Rollout {
                start: 0,
                goal: 1,
                nodes: vec![0],
                tokens: Vec::new(),
                reached_goal: reached && !illegal,
                first_illegal: illegal.then_some(0),
                out_of_range: false,
                perturbed_steps: 0,
                dists: Vec::new(),
            })
            .collect();
        let r = NavReport::from_rollouts(&rollouts, 0.0);
        prop_assert!(r.partitions());
        prop_assert_eq!(r.success + r.disconnection + r.wrong_target, flags.len());
    }

    #[test]
    fn derived_seeds_depend_on_every_input(seed in any::<u64>(), a in 0u64..1000, b in 0u64..1000) {
        prop_assert_eq!(rng::derive_seed(seed, "x", &[a]), rng::derive_seed(seed, "x", &[a]));
        prop_assert_ne!(rng::derive_seed(seed, "x", &[a]), rng::derive_seed(seed, "y", &[a]));
        if a != b {
            prop_assert_ne!(rng::derive_seed(seed, "x", &[a]), rng::derive_seed(seed, "x", &[b]));
        }
    }
}
