//! Delaunay triangulation on an integer grid.
//!
//! Points carry integer coordinates, so both predicates are evaluated exactly
//! in `i128`. Construction is a lexicographic sweep (which yields some valid
//! triangulation of the convex hull) followed by Lawson edge flips until every
//! interior edge is locally Delaunay. Cocircular configurations are left
//! unflipped, which picks one of the equally valid triangulations
//! deterministically.

use std::collections::{BTreeSet, HashMap};

use super::GraphError;

/// Grid point. Coordinates must stay below 2^30 in magnitude for the
/// predicates to be overflow-free.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct IPoint {
    pub x: i64,
    pub y: i64,
}

/// Twice the signed area of `abc`; positive when counter-clockwise.
pub fn orient(a: IPoint, b: IPoint, c: IPoint) -> i128 {
    let (abx, aby) = ((b.x - a.x) as i128, (b.y - a.y) as i128);
    let (acx, acy) = ((c.x - a.x) as i128, (c.y - a.y) as i128);
    abx * acy - aby * acx
}

/// Positive when `d` lies strictly inside the circumcircle of the
/// counter-clockwise triangle `abc`, zero when cocircular.
pub fn incircle(a: IPoint, b: IPoint, c: IPoint, d: IPoint) -> i128 {
    let (adx, ady) = ((a.x - d.x) as i128, (a.y - d.y) as i128);
    let (bdx, bdy) = ((b.x - d.x) as i128, (b.y - d.y) as i128);
    let (cdx, cdy) = ((c.x - d.x) as i128, (c.y - d.y) as i128);
    let alift = adx * adx + ady * ady;
    let blift = bdx * bdx + bdy * bdy;
    let clift = cdx * cdx + cdy * cdy;
    alift * (bdx * cdy - cdx * bdy) + blift * (cdx * ady - adx * cdy) + clift * (adx * bdy - bdx * ady)
}

#[derive(Debug, Clone)]
pub struct Triangulation {
    /// Counter-clockwise triangles over input point indices.
    pub triangles: Vec<[usize; 3]>,
}

impl Triangulation {
    /// Undirected edges `(u, v)` with `u < v`.
    pub fn edges(&self) -> BTreeSet<(usize, usize)> {
        let mut out = BTreeSet::new();
        for t in &self.triangles {
            for i in 0..3 {
                let (u, v) = (t[i], t[(i + 1) % 3]);
                out.insert((u.min(v), u.max(v)));
            }
        }
        out
    }
}

/// Triangulates distinct, not-all-collinear points.
pub fn triangulate(points: &[IPoint]) -> Result<Triangulation, GraphError> {
    let n = points.len();
    if n < 3 {
        return Err(GraphError::Parameter("need at least 3 points".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| points[i]);
    if order.windows(2).any(|w| points[w[0]] == points[w[1]]) {
        return Err(GraphError::Parameter("duplicate points".into()));
    }

    let (p0, p1) = (points[order[0]], points[order[1]]);
    let first =
        (2..n).find(|&k| orient(p0, p1, points[order[k]]) != 0).ok_or_else(|| GraphError::Parameter("all points are collinear".into()))?;
    let apex = order[first];
    let left = orient(p0, p1, points[apex]) > 0;

    let mut tris: Vec<[usize; 3]> = Vec::with_capacity(2 * n);
    for w in order[..first].windows(2) {
        tris.push(if left { [w[0], w[1], apex] } else { [w[1], w[0], apex] });
    }
    let mut hull: Vec<usize> = if left { order[..first].to_vec() } else { order[..first].iter().rev().copied().collect() };
    hull.push(apex);

    for &q in &order[first + 1..] {
        let m = hull.len();
        let pq = points[q];
        let visible: Vec<bool> = (0..m).map(|i| orient(points[hull[i]], points[hull[(i + 1) % m]], pq) < 0).collect();
        let start = (0..m).find(|&i| visible[i] && !visible[(i + m - 1) % m]).expect("point outside the hull must see a hull edge");
        let mut end = start;
        while visible[end % m] {
            let (a, b) = (hull[end % m], hull[(end + 1) % m]);
            tris.push([b, a, q]);
            end += 1;
        }
        // Hull vertices strictly inside the visible chain are dropped.
        let keep_from = end % m;
        let mut next = Vec::with_capacity(m + 1);
        let mut i = keep_from;
        loop {
            next.push(hull[i]);
            if i == start % m {
                break;
            }
            i = (i + 1) % m;
        }
        next.push(q);
        hull = next;
    }

    legalize(points, &mut tris);
    Ok(Triangulation { triangles: tris })
}

fn legalize(points: &[IPoint], tris: &mut [[usize; 3]]) {
    let mut owner: HashMap<(usize, usize), usize> = HashMap::with_capacity(tris.len() * 3);
    for (ti, t) in tris.iter().enumerate() {
        for i in 0..3 {
            owner.insert((t[i], t[(i + 1) % 3]), ti);
        }
    }
    let mut stack: Vec<(usize, usize)> = owner.keys().filter(|&&(u, v)| u < v).copied().collect();
    stack.sort_unstable();

    while let Some((a, b)) = stack.pop() {
        let (Some(&t1), Some(&t2)) = (owner.get(&(a, b)), owner.get(&(b, a))) else {
            continue;
        };
        let c = third(&tris[t1], a, b);
        let d = third(&tris[t2], b, a);
        if incircle(points[a], points[b], points[c], points[d]) <= 0 {
            continue;
        }
        owner.remove(&(a, b));
        owner.remove(&(b, a));
        tris[t1] = [a, d, c];
        tris[t2] = [d, b, c];
        for (ti, t) in [(t1, tris[t1]), (t2, tris[t2])] {
            for i in 0..3 {
                owner.insert((t[i], t[(i + 1) % 3]), ti);
            }
        }
        for (u, v) in [(a, d), (d, b), (b, c), (c, a)] {
            stack.push((u.min(v), u.max(v)));
        }
    }
}

/// Vertex of `t` opposite the directed edge `a -> b` (which `t` contains).
fn third(t: &[usize; 3], a: usize, b: usize) -> usize {
    for i in 0..3 {
        if t[i] == a && t[(i + 1) % 3] == b {
            return t[(i + 2) % 3];
        }
    }
    unreachable!("triangle {t:?} does not contain edge {a}->{b}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_points(n: usize, seed: u64, range: i64) -> Vec<IPoint> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut pts: Vec<IPoint> = Vec::new();
        while pts.len() < n {
            let p = IPoint { x: rng.random_range(0..range), y: rng.random_range(0..range) };
            if !pts.contains(&p) {
                pts.push(p);
            }
        }
        pts
    }

    /// Points on the hull boundary (collinear boundary points included).
    fn hull_size(points: &[IPoint]) -> usize {
        let n = points.len();
        let mut verts = BTreeSet::new();
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let extreme = (0..n).all(|k| {
                    let o = orient(points[i], points[j], points[k]);
                    k == i || k == j || o > 0 || (o == 0 && between(points[i], points[j], points[k]))
                });
                if extreme {
                    for k in 0..n {
                        if orient(points[i], points[j], points[k]) == 0 && between(points[i], points[j], points[k]) {
                            verts.insert(k);
                        }
                    }
                }
            }
        }
        verts.len()
    }

    fn between(a: IPoint, b: IPoint, c: IPoint) -> bool {
        c.x >= a.x.min(b.x) && c.x <= a.x.max(b.x) && c.y >= a.y.min(b.y) && c.y <= a.y.max(b.y)
    }

    #[test]
    fn empty_circumcircle_holds_by_brute_force() {
        for seed in 0..20 {
            let n = 4 + (seed as usize * 7) % 47;
            let pts = random_points(n, seed, 1 << 20);
            let tri = triangulate(&pts).unwrap();
            for t in &tri.triangles {
                assert!(orient(pts[t[0]], pts[t[1]], pts[t[2]]) > 0, "triangle not ccw");
                for (k, &p) in pts.iter().enumerate() {
                    if t.contains(&k) {
                        continue;
                    }
                    assert!(incircle(pts[t[0]], pts[t[1]], pts[t[2]], p) <= 0, "seed {seed}: point {k} inside");
                }
            }
            // Euler relation for a triangulated point set with h hull vertices.
            let h = hull_size(&pts);
            assert_eq!(tri.triangles.len(), 2 * n - 2 - h, "seed {seed}");
            assert_eq!(tri.edges().len(), 3 * n - 3 - h, "seed {seed}");
        }
    }

    #[test]
    fn handles_collinear_prefix_and_grid_degeneracy() {
        // A 4x4 lattice is maximally cocircular and starts with a collinear column.
        let pts: Vec<IPoint> = (0..16).map(|i| IPoint { x: i / 4, y: i % 4 }).collect();
        let tri = triangulate(&pts).unwrap();
        assert_eq!(tri.triangles.len(), 18);
        for t in &tri.triangles {
            for (k, &p) in pts.iter().enumerate() {
                if !t.contains(&k) {
                    assert!(incircle(pts[t[0]], pts[t[1]], pts[t[2]], p) <= 0);
                }
            }
        }
    }

    #[test]
    fn rejects_collinear_and_duplicate_sets() {
        let line: Vec<IPoint> = (0..5).map(|i| IPoint { x: i, y: 2 * i }).collect();
        assert!(triangulate(&line).is_err());
        let dup = vec![IPoint { x: 0, y: 0 }, IPoint { x: 1, y: 0 }, IPoint { x: 0, y: 0 }];
        assert!(triangulate(&dup).is_err());
    }
}
