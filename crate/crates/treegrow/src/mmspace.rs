//! Finite rooted metric measure spaces and Gromov-Prokhorov computations,
//! generic over the scalar: `f64` for simulation output, `BigRational` for
//! the exact oracle.
//!
//! The exact distance on small spaces searches relations as cliques of the
//! distortion-compatibility graph and certifies coupling mass by max-flow;
//! the distortion thresholds and flow values form the finite critical set
//! the infimum is attained on.

use crate::error::Error;
use crate::scalar::{smax, smin, Scalar};

/// Finite rooted metric measure space: symmetric distance matrix and
/// probability weights.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FiniteMmSpace<S> {
    pub dist: Vec<Vec<S>>,
    pub weights: Vec<S>,
    pub root: usize,
}

impl<S: Scalar> FiniteMmSpace<S> {
    pub fn new(dist: Vec<Vec<S>>, weights: Vec<S>, root: usize) -> Result<Self, Error> {
        let n = dist.len();
        if n == 0 || weights.len() != n || root >= n {
            return Err(Error::Structure("empty space or size mismatch".into()));
        }
        let tol = S::mass_tolerance();
        for (i, row) in dist.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Structure("distance matrix not square".into()));
            }
            if !row[i].is_zero() {
                return Err(Error::Structure(format!("nonzero diagonal at {i}")));
            }
            for (j, d) in row.iter().enumerate() {
                if *d < S::zero() {
                    return Err(Error::Structure(format!("negative distance at ({i},{j})")));
                }
                if (d.clone() - dist[j][i].clone()).abs() > tol {
                    return Err(Error::Structure(format!("asymmetry at ({i},{j})")));
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    if dist[i][k].clone() - dist[i][j].clone() - dist[j][k].clone() > tol {
                        return Err(Error::Structure(format!(
                            "triangle inequality fails at ({i},{j},{k})"
                        )));
                    }
                }
            }
        }
        let mut total = S::zero();
        for w in &weights {
            if *w < S::zero() {
                return Err(Error::Structure("negative weight".into()));
            }
            total = total + w.clone();
        }
        if (total - S::one()).abs() > tol {
            return Err(Error::Structure("weights do not sum to 1".into()));
        }
        Ok(FiniteMmSpace {
            dist,
            weights,
            root,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// One point of full mass at distance 0.
    pub fn point() -> Self {
        FiniteMmSpace {
            dist: vec![vec![S::zero()]],
            weights: vec![S::one()],
            root: 0,
        }
    }

    pub fn to_f64(&self) -> FiniteMmSpace<f64> {
        FiniteMmSpace {
            dist: self
                .dist
                .iter()
                .map(|r| r.iter().map(|d| d.to_f64()).collect())
                .collect(),
            weights: self.weights.iter().map(|w| w.to_f64()).collect(),
            root: self.root,
        }
    }
}

/// Strategy for the certified upper bound.
pub enum GpStrategy<'a> {
    /// A provided correspondence; the induced coupling maximizes the mass on
    /// it by max-flow.
    Natural(&'a [(usize, usize)]),
    /// Quantile coupling of the root-distance profiles: full-mass relation,
    /// upper bound equals its distortion.
    Greedy,
}

/// Distortion of a relation: the largest disagreement of distances between
/// coupled pairs.
pub fn distortion<S: Scalar>(
    x: &FiniteMmSpace<S>,
    y: &FiniteMmSpace<S>,
    relation: &[(usize, usize)],
) -> S {
    let mut dis = S::zero();
    for (a, b) in relation {
        for (a2, b2) in relation {
            let d = (x.dist[*a][*a2].clone() - y.dist[*b][*b2].clone()).abs();
            dis = smax(dis, d);
        }
    }
    dis
}

/// Largest coupling mass concentrated on the relation (bipartite max-flow
/// with the marginals as capacities).
pub fn max_coupled_mass<S: Scalar>(
    x: &FiniteMmSpace<S>,
    y: &FiniteMmSpace<S>,
    relation: &[(usize, usize)],
) -> S {
    // Residual capacities: source->X = remaining x weight, Y->sink likewise;
    // relation edges are uncapped. Augment along shortest paths.
    let n = x.len();
    let m = y.len();
    let mut rx: Vec<S> = x.weights.clone();
    let mut ry: Vec<S> = y.weights.clone();
    let mut flow: Vec<Vec<S>> = vec![vec![S::zero(); m]; n];
    let adj: Vec<Vec<usize>> = {
        let mut a = vec![Vec::new(); n];
        for (i, j) in relation {
            a[*i].push(*j);
        }
        a
    };
    let back: Vec<Vec<usize>> = {
        let mut b = vec![Vec::new(); m];
        for (i, j) in relation {
            b[*j].push(*i);
        }
        b
    };
    let mut total = S::zero();
    loop {
        // BFS over alternating residual edges from unsaturated X nodes.
        let mut prev_x: Vec<Option<usize>> = vec![None; n]; // via y
        let mut prev_y: Vec<Option<usize>> = vec![None; m]; // via x
        let mut queue: Vec<usize> = Vec::new();
        let mut seen_x = vec![false; n];
        for i in 0..n {
            if rx[i] > S::zero() {
                seen_x[i] = true;
                queue.push(i);
            }
        }
        let mut reached: Option<usize> = None;
        let mut seen_y = vec![false; m];
        'bfs: while let Some(i) = queue.pop() {
            for &j in &adj[i] {
                if !seen_y[j] {
                    seen_y[j] = true;
                    prev_y[j] = Some(i);
                    if ry[j] > S::zero() {
                        reached = Some(j);
                        break 'bfs;
                    }
                    // Residual back-edges along positive flows.
                    for &i2 in &back[j] {
                        if !seen_x[i2] && flow[i2][j] > S::zero() {
                            seen_x[i2] = true;
                            prev_x[i2] = Some(j);
                            queue.push(i2);
                        }
                    }
                }
            }
        }
        let Some(end) = reached else { break };
        // Bottleneck along the alternating path.
        let mut path: Vec<(usize, usize, bool)> = Vec::new(); // (x, y, forward)
        let mut j = end;
        let mut bottleneck = ry[end].clone();
        loop {
            let i = prev_y[j].expect("path");
            path.push((i, j, true));
            match prev_x[i] {
                None => {
                    bottleneck = smin(bottleneck, rx[i].clone());
                    break;
                }
                Some(jb) => {
                    bottleneck = smin(bottleneck, flow[i][jb].clone());
                    path.push((i, jb, false));
                    j = jb;
                }
            }
        }
        if bottleneck <= S::zero() {
            break;
        }
        let (sx, _, _) = *path.last().unwrap();
        rx[sx] = rx[sx].clone() - bottleneck.clone();
        ry[end] = ry[end].clone() - bottleneck.clone();
        for (i, j, fwd) in path {
            if fwd {
                flow[i][j] = flow[i][j].clone() + bottleneck.clone();
            } else {
                flow[i][j] = flow[i][j].clone() - bottleneck.clone();
            }
        }
        total = total + bottleneck;
    }
    total
}

/// Certified upper bound on the Gromov-Prokhorov distance.
pub fn gp_upper_bound<S: Scalar>(
    x: &FiniteMmSpace<S>,
    y: &FiniteMmSpace<S>,
    strategy: GpStrategy<'_>,
) -> Result<S, Error> {
    match strategy {
        GpStrategy::Natural(pairs) => {
            for (i, j) in pairs {
                if *i >= x.len() || *j >= y.len() {
                    return Err(Error::Range("correspondence index out of range".into()));
                }
            }
            let mass = max_coupled_mass(x, y, pairs);
            let dis = distortion(x, y, pairs);
            Ok(smax(S::one() - mass, dis))
        }
        GpStrategy::Greedy => {
            let pairs = quantile_relation(x, y);
            // The quantile coupling carries full mass on its relation.
            Ok(distortion(x, y, &pairs))
        }
    }
}

/// Fragment relation of the quantile coupling of root-distance profiles.
fn quantile_relation<S: Scalar>(x: &FiniteMmSpace<S>, y: &FiniteMmSpace<S>) -> Vec<(usize, usize)> {
    let order = |s: &FiniteMmSpace<S>| -> Vec<usize> {
        let mut idx: Vec<usize> = (0..s.len()).collect();
        idx.sort_by(|&a, &b| {
            s.dist[s.root][a]
                .partial_cmp(&s.dist[s.root][b])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        idx
    };
    let ox = order(x);
    let oy = order(y);
    let mut pairs = Vec::new();
    let (mut a, mut b) = (0usize, 0usize);
    let mut need_x = x.weights[ox[0]].clone();
    let mut need_y = y.weights[oy[0]].clone();
    while a < ox.len() && b < oy.len() {
        if need_x > S::zero() && need_y > S::zero() {
            pairs.push((ox[a], oy[b]));
        }
        if need_x <= need_y {
            need_y = need_y - need_x.clone();
            a += 1;
            if a < ox.len() {
                need_x = x.weights[ox[a]].clone();
            }
        } else {
            need_x = need_x - need_y.clone();
            b += 1;
            if b < oy.len() {
                need_y = y.weights[oy[b]].clone();
            }
        }
    }
    pairs
}

/// Exact Gromov-Prokhorov distance for spaces with at most five points:
/// exhaustive search over maximal cliques of the distortion graph at every
/// critical threshold, with exact coupling feasibility.
pub fn gp_exact_small<S: Scalar>(x: &FiniteMmSpace<S>, y: &FiniteMmSpace<S>) -> Result<S, Error> {
    if x.len() > 5 || y.len() > 5 {
        return Err(Error::SizeCap(format!(
            "gp_exact_small caps at 5 points, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    let m = y.len();
    let verts: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..m).map(move |j| (i, j)))
        .collect();
    let v = verts.len();

    // Pairwise distortion values.
    let mut dis = vec![vec![S::zero(); v]; v];
    let mut thresholds: Vec<S> = vec![S::zero()];
    for p in 0..v {
        for q in 0..v {
            let (a, b) = verts[p];
            let (a2, b2) = verts[q];
            let d = (x.dist[a][a2].clone() - y.dist[b][b2].clone()).abs();
            thresholds.push(d.clone());
            dis[p][q] = d;
        }
    }
    thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    thresholds.dedup();

    let mut best: Option<S> = None;
    for eps in &thresholds {
        // Compatibility graph at this threshold.
        let mut adj = vec![0u32; v];
        for p in 0..v {
            for q in 0..v {
                if p != q && dis[p][q] <= *eps {
                    adj[p] |= 1 << q;
                }
            }
        }
        let mut best_flow: Option<S> = None;
        let all: u32 = if v == 32 { u32::MAX } else { (1 << v) - 1 };
        bron_kerbosch(&adj, 0, all, 0, &mut |clique: u32| {
            let rel: Vec<(usize, usize)> = (0..v)
                .filter(|p| clique & (1 << p) != 0)
                .map(|p| verts[p])
                .collect();
            let f = max_coupled_mass(x, y, &rel);
            if best_flow.as_ref().map(|b| f > *b).unwrap_or(true) {
                best_flow = Some(f);
            }
        });
        let flow = best_flow.unwrap_or_else(S::zero);
        let candidate = smax(eps.clone(), S::one() - flow);
        if best.as_ref().map(|b| candidate < *b).unwrap_or(true) {
            best = Some(candidate);
        }
    }
    Ok(best.expect("at least one threshold"))
}

/// Bron-Kerbosch with pivoting over a bitset graph.
fn bron_kerbosch(adj: &[u32], r: u32, mut p: u32, mut x: u32, report: &mut impl FnMut(u32)) {
    if p == 0 && x == 0 {
        report(r);
        return;
    }
    // Pivot with the most neighbours in p.
    let candidates = p | x;
    let mut pivot = 0usize;
    let mut best = -1i32;
    for u in 0..adj.len() {
        if candidates & (1 << u) != 0 {
            let cnt = (adj[u] & p).count_ones() as i32;
            if cnt > best {
                best = cnt;
                pivot = u;
            }
        }
    }
    let mut cand = p & !adj[pivot];
    while cand != 0 {
        let u = cand.trailing_zeros() as usize;
        let bit = 1u32 << u;
        bron_kerbosch(adj, r | bit, p & adj[u], x & adj[u], report);
        p &= !bit;
        x |= bit;
        cand &= !bit;
    }
}
