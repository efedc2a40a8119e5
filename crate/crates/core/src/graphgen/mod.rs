//! Synthetic world graphs.
//!
//! Two families are supported: Erdős–Rényi digraphs (optionally restricted to
//! a random topological order) and urban-street graphs built from a Delaunay
//! mesh thinned down to its Euclidean MST plus a fraction of the remaining
//! mesh edges. Edges define which moves are legal for the navigation task.

mod delaunay;
mod er;
mod usg;

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use delaunay::{triangulate, IPoint, Triangulation};
pub use er::generate_er;
pub use usg::{generate_usg, GRID_BITS};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("invalid graph parameter: {0}")]
    Parameter(String),
    #[error("graph invariant violated: {0}")]
    Invariant(String),
    #[error("malformed graph file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphKind {
    Er,
    ErDag,
    Usg,
}

impl fmt::Display for GraphKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GraphKind::Er => "er",
            GraphKind::ErDag => "er_dag",
            GraphKind::Usg => "usg",
        })
    }
}

/// Generation parameters echoed into the graph file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GraphParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    /// Size of the Delaunay edge pool outside the MST (USG only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extra_pool: Option<usize>,
    /// Number of times USG point sampling was redrawn because of degeneracy.
    #[serde(default)]
    pub retries: u32,
}

/// A directed graph over nodes `0..n`.
#[derive(Debug, Clone)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    coords: Option<Vec<[f64; 2]>>,
    kind: GraphKind,
    seed: u64,
    params: GraphParams,
    out: Vec<Vec<usize>>,
}

impl PartialEq for Graph {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
            && self.edges == other.edges
            && self.coords == other.coords
            && self.kind == other.kind
            && self.seed == other.seed
            && self.params == other.params
    }
}

impl Graph {
    /// Builds a graph, sorting the edge list and checking every invariant of
    /// its kind.
    pub fn new(
        n: usize,
        mut edges: Vec<(usize, usize)>,
        coords: Option<Vec<[f64; 2]>>,
        kind: GraphKind,
        seed: u64,
        params: GraphParams,
    ) -> Result<Self, GraphError> {
        edges.sort_unstable();
        let mut out = vec![Vec::new(); n];
        for (i, &(u, v)) in edges.iter().enumerate() {
            if u >= n || v >= n {
                return Err(GraphError::Invariant(format!("edge ({u},{v}) out of range")));
            }
            if u == v {
                return Err(GraphError::Invariant(format!("self-loop at {u}")));
            }
            if i > 0 && edges[i - 1] == (u, v) {
                return Err(GraphError::Invariant(format!("duplicate edge ({u},{v})")));
            }
            out[u].push(v);
        }
        let g = Graph { n, edges, coords, kind, seed, params, out };
        g.validate()?;
        Ok(g)
    }

    fn validate(&self) -> Result<(), GraphError> {
        if let Some(c) = &self.coords {
            if c.len() != self.n {
                return Err(GraphError::Invariant("coordinate count differs from n".into()));
            }
        }
        match self.kind {
            GraphKind::Er => Ok(()),
            GraphKind::ErDag => {
                if self.topological_order().is_none() {
                    return Err(GraphError::Invariant("ER_DAG graph contains a cycle".into()));
                }
                Ok(())
            }
            GraphKind::Usg => {
                let coords = self.coords.as_ref().ok_or_else(|| GraphError::Invariant("USG graph without coordinates".into()))?;
                for &(u, v) in &self.edges {
                    if !self.has_edge(v, u) {
                        return Err(GraphError::Invariant(format!("edge ({u},{v}) has no reverse")));
                    }
                }
                if !self.is_weakly_connected() {
                    return Err(GraphError::Invariant("USG graph is disconnected".into()));
                }
                for w in coords.windows(2) {
                    if (w[0][0], w[0][1]) >= (w[1][0], w[1][1]) {
                        return Err(GraphError::Invariant("node ids are not the lexicographic rank of coordinates".into()));
                    }
                }
                Ok(())
            }
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn coords(&self) -> Option<&[[f64; 2]]> {
        self.coords.as_deref()
    }

    pub fn kind(&self) -> GraphKind {
        self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &GraphParams {
        &self.params
    }

    /// Out-neighbours of `u` in increasing id order.
    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.out[u]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u < self.n && self.out[u].binary_search(&v).is_ok()
    }

    pub fn out_degree(&self, u: usize) -> usize {
        self.out[u].len()
    }

    /// Kahn's algorithm; `None` when the graph has a cycle.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let mut indeg = vec![0usize; self.n];
        for &(_, v) in &self.edges {
            indeg[v] += 1;
        }
        let mut queue: VecDeque<usize> = (0..self.n).filter(|&u| indeg[u] == 0).collect();
        let mut order = Vec::with_capacity(self.n);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &v in &self.out[u] {
                indeg[v] -= 1;
                if indeg[v] == 0 {
                    queue.push_back(v);
                }
            }
        }
        (order.len() == self.n).then_some(order)
    }

    pub fn is_weakly_connected(&self) -> bool {
        if self.n == 0 {
            return true;
        }
        let mut und = vec![Vec::new(); self.n];
        for &(u, v) in &self.edges {
            und[u].push(v);
            und[v].push(u);
        }
        let mut seen = vec![false; self.n];
        let mut stack = vec![0];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for &v in &und[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count == self.n
    }

    /// Nodes reachable from `s` (excluding `s` unless it lies on a cycle).
    pub fn reachable_from(&self, s: usize) -> Vec<bool> {
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([s]);
        let mut visited = vec![false; self.n];
        visited[s] = true;
        while let Some(u) = queue.pop_front() {
            for &v in &self.out[u] {
                seen[v] = true;
                if !visited[v] {
                    visited[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen
    }

    /// Serializes to the versioned JSON graph file. Output is byte-stable.
    pub fn to_json(&self) -> String {
        let file = GraphFile {
            version: 1,
            kind: self.kind,
            n: self.n,
            seed: self.seed,
            params: self.params.clone(),
            edges: self.edges.iter().map(|&(u, v)| [u, v]).collect(),
            coords: self.coords.clone(),
        };
        serde_json::to_string(&file).expect("graph serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self, GraphError> {
        let file: GraphFile = serde_json::from_str(s).map_err(|e| GraphError::Format(e.to_string()))?;
        if file.version != 1 {
            return Err(GraphError::Format(format!("unsupported version {}", file.version)));
        }
        let edges: Vec<_> = file.edges.into_iter().map(|[u, v]| (u, v)).collect();
        if edges.windows(2).any(|w| w[0] > w[1]) {
            return Err(GraphError::Format("edges are not sorted".into()));
        }
        Graph::new(file.n, edges, file.coords, file.kind, file.seed, file.params)
    }

    /// Content hash of the serialized graph.
    pub fn content_hash(&self) -> String {
        crate::rng::content_hash(self.to_json().as_bytes())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFile {
    version: u32,
    kind: GraphKind,
    n: usize,
    seed: u64,
    params: GraphParams,
    edges: Vec<[usize; 2]>,
    coords: Option<Vec<[f64; 2]>>,
}

/// All ordered pairs `(s, g)`, `s != g`, joined by a directed path, in
/// lexicographic order.
pub fn reachable_pairs(g: &Graph) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for s in 0..g.n() {
        let seen = g.reachable_from(s);
        pairs.extend((0..g.n()).filter(|&t| t != s && seen[t]).map(|t| (s, t)));
    }
    pairs
}

/// Undirected edge set `{u, v}` with `u < v`; helper for symmetric graphs.
pub fn undirected_edges(g: &Graph) -> BTreeSet<(usize, usize)> {
    g.edges().iter().map(|&(u, v)| (u.min(v), u.max(v))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> Graph {
        Graph::new(3, vec![(1, 2), (0, 1)], None, GraphKind::Er, 0, GraphParams::default()).unwrap()
    }

    #[test]
    fn reachable_pairs_of_chain_is_transitive_closure() {
        assert_eq!(reachable_pairs(&chain()), vec![(0, 1), (0, 2), (1, 2)]);
    }

    #[test]
    fn empty_graph_has_no_reachable_pairs() {
        let g = Graph::new(4, vec![], None, GraphKind::Er, 0, GraphParams::default()).unwrap();
        assert!(reachable_pairs(&g).is_empty());
    }

    #[test]
    fn rejects_self_loops_and_duplicates() {
        let p = GraphParams::default();
        assert!(Graph::new(3, vec![(1, 1)], None, GraphKind::Er, 0, p.clone()).is_err());
        assert!(Graph::new(3, vec![(0, 1), (0, 1)], None, GraphKind::Er, 0, p.clone()).is_err());
        assert!(Graph::new(3, vec![(0, 1), (1, 0)], None, GraphKind::ErDag, 0, p).is_err());
    }

    #[test]
    fn json_round_trip() {
        let g = generate_usg(30, 0.4, 11).unwrap();
        let back = Graph::from_json(&g.to_json()).unwrap();
        assert_eq!(g, back);
        assert_eq!(g.to_json(), back.to_json());
    }

    #[test]
    fn rejects_unsorted_edge_file() {
        let s = r#"{"version":1,"kind":"er","n":3,"seed":0,"params":{"retries":0},"edges":[[1,2],[0,1]],"coords":null}"#;
        assert!(matches!(Graph::from_json(s), Err(GraphError::Format(_))));
    }
}
