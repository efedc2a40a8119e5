use rand::seq::SliceRandom;
use rand::Rng as _;

use super::{Graph, GraphError, GraphKind, GraphParams};
use crate::rng;

/// Erdős–Rényi digraph: every ordered pair is admitted independently with
/// probability `p`. In `dag` mode only pairs ordered by a random permutation
/// of the nodes are candidates, which makes the result acyclic.
pub fn generate_er(n: usize, p: f64, dag: bool, seed: u64) -> Result<Graph, GraphError> {
    if n < 2 {
        return Err(GraphError::Parameter(format!("n must be at least 2, got {n}")));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(GraphError::Parameter(format!("p must lie in [0, 1], got {p}")));
    }
    let mut rng = rng::stream(seed, "graph/er", &[]);
    let mut edges = Vec::new();
    let kind = if dag {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        for i in 0..n {
            for j in i + 1..n {
                if rng.random::<f64>() < p {
                    edges.push((order[i], order[j]));
                }
            }
        }
        GraphKind::ErDag
    } else {
        for u in 0..n {
            for v in 0..n {
                if u != v && rng.random::<f64>() < p {
                    edges.push((u, v));
                }
            }
        }
        GraphKind::Er
    };
    let params = GraphParams { p: Some(p), ..GraphParams::default() };
    Graph::new(n, edges, None, kind, seed, params)
}
