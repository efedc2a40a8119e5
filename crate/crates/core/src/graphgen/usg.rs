use rand::seq::index;
use rand::Rng as _;

use super::delaunay::{triangulate, IPoint};
use super::{Graph, GraphError, GraphKind, GraphParams};
use crate::rng;

/// Coordinates are drawn on a 2^GRID_BITS lattice of the unit square so the
/// geometric predicates stay exact.
pub const GRID_BITS: u32 = 26;
const MAX_RETRIES: u32 = 64;

/// Urban-street graph: Delaunay mesh over uniform points, reduced to its
/// Euclidean MST plus `floor(|extra| * rho)` uniformly chosen non-tree mesh
/// edges; nodes are relabeled by lexicographic `(x, y)` rank and every
/// undirected edge is emitted in both directions.
pub fn generate_usg(n: usize, rho: f64, seed: u64) -> Result<Graph, GraphError> {
    if n < 3 {
        return Err(GraphError::Parameter(format!("n must be at least 3, got {n}")));
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(GraphError::Parameter(format!("rho must lie in [0, 1], got {rho}")));
    }
    let side = 1i64 << GRID_BITS;
    for attempt in 0..MAX_RETRIES {
        let mut rng = rng::stream(seed, "graph/usg/points", &[attempt as u64]);
        let mut pts: Vec<IPoint> = (0..n).map(|_| IPoint { x: rng.random_range(0..side), y: rng.random_range(0..side) }).collect();
        // Relabel first: id = lexicographic rank of the coordinates.
        pts.sort_unstable();
        let tri = match triangulate(&pts) {
            Ok(t) => t,
            Err(_) => {
                log::warn!("degenerate USG point set (seed {seed}, attempt {attempt}); redrawing");
                continue;
            }
        };
        let mesh: Vec<(usize, usize)> = tri.edges().into_iter().collect();
        let tree = euclidean_mst(&pts, &mesh);
        let extra: Vec<(usize, usize)> = mesh.iter().copied().filter(|e| tree.binary_search(e).is_err()).collect();
        let add = ((extra.len() as f64) * rho).floor() as usize;
        let mut pick_rng = rng::stream(seed, "graph/usg/extra", &[attempt as u64]);
        let mut picked: Vec<usize> = index::sample(&mut pick_rng, extra.len(), add).into_vec();
        picked.sort_unstable();

        let mut edges = Vec::with_capacity(2 * (tree.len() + add));
        for &(u, v) in tree.iter().chain(picked.iter().map(|&i| &extra[i])) {
            edges.push((u, v));
            edges.push((v, u));
        }
        let scale = side as f64;
        let coords = pts.iter().map(|p| [p.x as f64 / scale, p.y as f64 / scale]).collect();
        let params = GraphParams { rho: Some(rho), extra_pool: Some(extra.len()), retries: attempt, ..Default::default() };
        return Graph::new(n, edges, Some(coords), GraphKind::Usg, seed, params);
    }
    Err(GraphError::Parameter(format!("no non-degenerate point set after {MAX_RETRIES} draws")))
}

/// Kruskal over the mesh edges. Lengths are compared exactly; ties break on
/// the `(u, v)` labels so the tree is a pure function of the point set.
fn euclidean_mst(pts: &[IPoint], mesh: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let len2 = |&(u, v): &(usize, usize)| {
        let dx = (pts[u].x - pts[v].x) as i128;
        let dy = (pts[u].y - pts[v].y) as i128;
        dx * dx + dy * dy
    };
    let mut sorted: Vec<(i128, (usize, usize))> = mesh.iter().map(|e| (len2(e), *e)).collect();
    sorted.sort_unstable();
    let mut parent: Vec<usize> = (0..pts.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut tree = Vec::with_capacity(pts.len() - 1);
    for (_, (u, v)) in sorted {
        let (ru, rv) = (find(&mut parent, u), find(&mut parent, v));
        if ru != rv {
            parent[ru.max(rv)] = ru.min(rv);
            tree.push((u, v));
        }
    }
    tree.sort_unstable();
    tree
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphgen::{reachable_pairs, undirected_edges};

    #[test]
    fn three_points_make_a_triangle() {
        let g = generate_usg(3, 1.0, 4).unwrap();
        assert_eq!(g.edges().len(), 6);
    }

    #[test]
    fn zero_density_keeps_only_the_tree() {
        for seed in 0..5 {
            let g = generate_usg(10, 0.0, seed).unwrap();
            assert_eq!(g.edges().len(), 18);
        }
    }

    #[test]
    fn edge_count_matches_pool_identity() {
        let g = generate_usg(100, 0.3, 1).unwrap();
        let pool = g.params().extra_pool.unwrap();
        let expected = 2 * (99 + ((pool as f64) * 0.3).floor() as usize);
        assert_eq!(g.edges().len(), expected);
        assert!(g.is_weakly_connected());
    }

    #[test]
    fn tree_is_a_minimum_spanning_tree_of_the_mesh() {
        // Cut property check: every tree edge is no longer than any mesh edge
        // crossing the cut it defines.
        let side = (1i64 << GRID_BITS) as f64;
        let g = generate_usg(25, 0.0, 8).unwrap();
        let coords = g.coords().unwrap();
        let pts: Vec<IPoint> = coords.iter().map(|c| IPoint { x: (c[0] * side) as i64, y: (c[1] * side) as i64 }).collect();
        let mesh: Vec<_> = triangulate(&pts).unwrap().edges().into_iter().collect();
        let tree: Vec<_> = undirected_edges(&g).into_iter().collect();
        let len2 = |(u, v): (usize, usize)| {
            let dx = (pts[u].x - pts[v].x) as i128;
            let dy = (pts[u].y - pts[v].y) as i128;
            dx * dx + dy * dy
        };
        for &cut in &tree {
            let rest: Vec<_> = tree.iter().copied().filter(|&e| e != cut).collect();
            let side_of = components(25, &rest);
            for &e in &mesh {
                if side_of[e.0] != side_of[e.1] {
                    assert!(len2(cut) <= len2(e));
                }
            }
        }
    }

    fn components(n: usize, edges: &[(usize, usize)]) -> Vec<usize> {
        let mut label: Vec<usize> = (0..n).collect();
        loop {
            let mut changed = false;
            for &(u, v) in edges {
                let m = label[u].min(label[v]);
                if label[u] != m || label[v] != m {
                    label[u] = m;
                    label[v] = m;
                    changed = true;
                }
            }
            if !changed {
                return label;
            }
        }
    }

    #[test]
    fn reachable_pairs_are_symmetric() {
        for seed in 0..10 {
            let g = generate_usg(20, 0.3, seed).unwrap();
            let pairs = reachable_pairs(&g);
            assert_eq!(pairs.len(), 20 * 19);
            for &(s, t) in &pairs {
                assert!(pairs.binary_search(&(t, s)).is_ok());
            }
        }
    }
}
