//! Unit-weight path search: lexicographically-least shortest paths and Yen's
//! K-shortest loopless paths.

use std::collections::{BTreeSet, HashSet, VecDeque};

use crate::graphgen::Graph;

/// Nodes and directed edges temporarily removed from a graph.
#[derive(Debug, Default, Clone)]
pub struct Blocked {
    pub nodes: HashSet<usize>,
    pub edges: HashSet<(usize, usize)>,
}

impl Blocked {
    fn allows(&self, u: usize, v: usize) -> bool {
        !self.nodes.contains(&v) && !self.edges.contains(&(u, v))
    }
}

/// Shortest path by hop count from `s` to `t`; among equally short paths the
/// lexicographically smallest node sequence is returned.
pub fn shortest_path(g: &Graph, s: usize, t: usize) -> Option<Vec<usize>> {
    shortest_path_avoiding(g, s, t, &Blocked::default())
}

pub fn shortest_path_avoiding(g: &Graph, s: usize, t: usize, blocked: &Blocked) -> Option<Vec<usize>> {
    if blocked.nodes.contains(&s) || blocked.nodes.contains(&t) {
        return None;
    }
    if s == t {
        return Some(vec![s]);
    }
    // Distances to `t` over reversed edges, then a greedy smallest-id descent.
    let n = g.n();
    let mut rev: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(u, v) in g.edges() {
        rev[v].push(u);
    }
    let mut dist = vec![usize::MAX; n];
    dist[t] = 0;
    let mut queue = VecDeque::from([t]);
    while let Some(v) = queue.pop_front() {
        for &u in &rev[v] {
            if dist[u] == usize::MAX && !blocked.nodes.contains(&u) && blocked.allows(u, v) {
                dist[u] = dist[v] + 1;
                queue.push_back(u);
            }
        }
    }
    if dist[s] == usize::MAX {
        return None;
    }
    let mut path = vec![s];
    let mut cur = s;
    while cur != t {
        cur = *g
            .neighbors(cur)
            .iter()
            .find(|&&v| blocked.allows(cur, v) && dist[v] != usize::MAX && dist[v] + 1 == dist[cur])
            .expect("distance labels admit a descent");
        path.push(cur);
    }
    Some(path)
}

/// Up to `k` loopless `s -> t` paths ordered by hop count, then
/// lexicographically. Empty when `t` is unreachable.
pub fn k_shortest(g: &Graph, s: usize, t: usize, k: usize) -> Vec<Vec<usize>> {
    let mut accepted: Vec<Vec<usize>> = Vec::new();
    if k == 0 {
        return accepted;
    }
    let Some(first) = shortest_path(g, s, t) else {
        return accepted;
    };
    accepted.push(first);
    let mut candidates: BTreeSet<(usize, Vec<usize>)> = BTreeSet::new();
    let mut seen: HashSet<Vec<usize>> = accepted.iter().cloned().collect();

    while accepted.len() < k {
        let last = accepted.last().expect("non-empty").clone();
        for i in 0..last.len() - 1 {
            let spur = last[i];
            let root = &last[..=i];
            let mut blocked = Blocked::default();
            for p in &accepted {
                if p.len() > i + 1 && &p[..=i] == root {
                    blocked.edges.insert((p[i], p[i + 1]));
                }
            }
            blocked.nodes.extend(root[..i].iter().copied());
            if let Some(tail) = shortest_path_avoiding(g, spur, t, &blocked) {
                let mut path = root[..i].to_vec();
                path.extend(tail);
                if seen.insert(path.clone()) {
                    candidates.insert((path.len(), path));
                }
            }
        }
        match candidates.pop_first() {
            Some((_, path)) => accepted.push(path),
            None => break,
        }
    }
    accepted
}
