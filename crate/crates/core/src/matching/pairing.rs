//! Exact minimum-cost perfect pairing on top of the blossom solver.
//!
//! The solver first runs on a sparse candidate graph (nearest allowed
//! partners of every entity). The resulting duals are then priced against
//! every allowed pair; any pair with negative reduced cost is added and the
//! problem is solved again. When no pair is violated the sparse optimum is
//! optimal for the complete graph.

use crate::error::{invalid, Error, Result};
use crate::matching::blossom::{self, Outcome};
use crate::matrix::sq_dist;

/// Pairwise costs over `len()` entities.
pub(crate) trait CostModel: Sync {
    fn len(&self) -> usize;

    /// Cost of pairing `i` with `j`, or `None` when forbidden.
    fn cost(&self, i: usize, j: usize) -> Option<f64>;

    /// An upper bound on every finite cost.
    fn bound(&self) -> f64;

    /// Up to `k` allowed partners of every entity, cheapest first, with
    /// equal costs ordered by [`tie`].
    fn candidates(&self, k: usize) -> Vec<Vec<usize>> {
        let mut buf = Vec::new();
        (0..self.len())
            .map(|i| {
                nearest_by_cost(self, i, k, &mut buf);
                buf.clone()
            })
            .collect()
    }

    /// When every allowed pair of entities that both have a point costs
    /// exactly their squared distance, pricing can sweep along a coordinate.
    fn point(&self, _i: usize) -> Option<&[f64]> {
        None
    }

    fn is_metric(&self) -> bool {
        false
    }
}

pub(crate) fn tie(i: usize, j: usize) -> u64 {
    let mut z = (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (j as u64);
    z = (z ^ (z >> 31)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^ (z >> 29)
}

pub(crate) fn nearest_by_cost<C: CostModel + ?Sized>(c: &C, i: usize, k: usize, out: &mut Vec<usize>) {
    out.clear();
    let mut all: Vec<(f64, u64, usize)> = (0..c.len())
        .filter(|&j| j != i)
        .filter_map(|j| c.cost(i, j).map(|d| (d, tie(i.min(j), i.max(j)), j)))
        .collect();
    let cmp = |a: &(f64, u64, usize), b: &(f64, u64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if all.len() > k {
        all.select_nth_unstable_by(k, cmp);
        all.truncate(k);
    }
    all.sort_unstable_by(cmp);
    out.extend(all.iter().map(|t| t.2));
}

type Near = (f64, u64, usize);

fn near_cmp(a: &Near, b: &Near) -> std::cmp::Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// The same lists as [`nearest_by_cost`] restricted to entities with a
/// point, found by sweeping outward along the widest coordinate. Entities
/// without a point get empty lists.
pub(crate) fn sweep_nearest(pts: &[Option<&[f64]>], k: usize, allowed: &dyn Fn(usize, usize) -> bool) -> Vec<Vec<usize>> {
    let m = pts.len();
    let mut out = vec![Vec::new(); m];
    let mut order: Vec<usize> = (0..m).filter(|&i| pts[i].is_some()).collect();
    let Some(&first) = order.first() else { return out };
    if k == 0 {
        return out;
    }
    let dims = pts[first].unwrap().len();
    let axis = (0..dims)
        .map(|a| {
            let (lo, hi) = order.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                let v = pts[i].unwrap()[a];
                (lo.min(v), hi.max(v))
            });
            (hi - lo, a)
        })
        .max_by(|x, y| x.0.total_cmp(&y.0))
        .map_or(0, |t| t.1);
    order.sort_by(|&a, &b| pts[a].unwrap()[axis].total_cmp(&pts[b].unwrap()[axis]).then(a.cmp(&b)));
    let xs: Vec<f64> = order.iter().map(|&i| pts[i].unwrap()[axis]).collect();
    let mut best: Vec<Near> = Vec::with_capacity(k + 1);
    for (r, &i) in order.iter().enumerate() {
        best.clear();
        let pi = pts[i].unwrap();
        let xi = xs[r];
        let (mut lo, mut hi) = (r, r + 1);
        let (mut lo_open, mut hi_open) = (r > 0, r + 1 < order.len());
        while lo_open || hi_open {
            let dl = if lo_open { xi - xs[lo - 1] } else { f64::INFINITY };
            let dh = if hi_open { xs[hi] - xi } else { f64::INFINITY };
            let left = dl <= dh;
            let (j, dx) = if left { (order[lo - 1], dl) } else { (order[hi], dh) };
            if best.len() == k && dx * dx > best[k - 1].0 {
                if left {
                    lo_open = false;
                } else {
                    hi_open = false;
                }
                continue;
            }
            if left {
                lo -= 1;
                lo_open = lo > 0;
            } else {
                hi += 1;
                hi_open = hi < order.len();
            }
            if !allowed(i, j) {
                continue;
            }
            let cand = (sq_dist(pi, pts[j].unwrap()), tie(i.min(j), i.max(j)), j);
            if best.len() < k || near_cmp(&cand, &best[k - 1]).is_lt() {
                let at = best.partition_point(|b| near_cmp(b, &cand).is_lt());
                best.insert(at, cand);
                best.truncate(k);
            }
        }
        out[i] = best.iter().map(|t| t.2).collect();
    }
    out
}

const TOP: i64 = 1 << 42;
const SCALE_BITS: i32 = 40;

struct Weights {
    scale: f64,
}

impl Weights {
    fn new(bound: f64) -> Self {
        let b = if bound.is_finite() && bound > 0.0 { bound } else { 1.0 };
        Weights {
            scale: 2f64.powi(SCALE_BITS) / b,
        }
    }

    /// Even integer weight; larger is better.
    #[inline]
    fn weight(&self, cost: f64) -> i64 {
        let ic = (cost * self.scale).round().min((TOP - 1) as f64) as i64;
        2 * (TOP - ic)
    }
}

fn greedy_start(nv: usize, edges: &[(usize, usize, i64)]) -> (Vec<i64>, Vec<usize>) {
    let none = usize::MAX;
    let mut adj = vec![Vec::new(); nv];
    for &(i, j, w) in edges {
        adj[i].push((j, w));
        adj[j].push((i, w));
    }
    let mut dual: Vec<i64> = adj
        .iter()
        .map(|a| a.iter().map(|e| e.1).max().unwrap_or(0))
        .collect();
    let mut mate = vec![none; nv];
    for v in 0..nv {
        if mate[v] != none {
            continue;
        }
        for &(u, w) in &adj[v] {
            if mate[u] == none && dual[u] + dual[v] == 2 * w {
                mate[u] = v;
                mate[v] = u;
                break;
            }
        }
    }
    for v in 0..nv {
        if mate[v] != none || adj[v].is_empty() {
            continue;
        }
        let lowest = adj[v].iter().map(|&(u, w)| 2 * w - dual[u]).max().unwrap();
        dual[v] = lowest;
        for &(u, w) in &adj[v] {
            if mate[u] == none && dual[u] + dual[v] == 2 * w {
                mate[u] = v;
                mate[v] = u;
                break;
            }
        }
    }
    (dual, mate)
}

fn price<C: CostModel + ?Sized>(c: &C, wts: &Weights, out: &Outcome, cap: usize) -> Vec<(usize, usize)> {
    let m = c.len();
    let mut viol: Vec<(i64, usize, usize)> = Vec::new();
    let (mut ci, mut cj) = (Vec::new(), Vec::new());
    let mut check = |i: usize, j: usize, viol: &mut Vec<(i64, usize, usize)>| {
        if let Some(d) = c.cost(i, j) {
            let rc = out.reduced_cost(i, j, wts.weight(d), &mut ci, &mut cj);
            if rc < 0 {
                viol.push((rc, i.min(j), i.max(j)));
            }
        }
    };
    if c.is_metric() {
        // rc < 0 needs round(cost * scale) < rho_i + rho_j with rho = (2 TOP - dual) / 4
        let reach: Vec<f64> = (0..m)
            .map(|i| ((2 * TOP - out.dual[i]) as f64 / 4.0 + 1.0) / wts.scale)
            .collect();
        let mut pts: Vec<usize> = (0..m).filter(|&i| c.point(i).is_some()).collect();
        let dims = pts.first().map_or(0, |&i| c.point(i).unwrap().len());
        let axis = (0..dims)
            .map(|a| {
                let (lo, hi) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                    let v = c.point(i).unwrap()[a];
                    (lo.min(v), hi.max(v))
                });
                (hi - lo, a)
            })
            .max_by(|x, y| x.0.total_cmp(&y.0))
            .map_or(0, |t| t.1);
        let x = |i: usize| c.point(i).map_or(0.0, |p| p[axis]);
        pts.sort_by(|&a, &b| x(a).total_cmp(&x(b)).then(a.cmp(&b)));
        let rmax = pts.iter().map(|&i| reach[i]).fold(f64::NEG_INFINITY, f64::max);
        for (a, &i) in pts.iter().enumerate() {
            let lim = reach[i] + rmax;
            if lim <= 0.0 {
                continue;
            }
            for &j in &pts[a + 1..] {
                let dx = x(j) - x(i);
                if dx * dx >= lim {
                    break;
                }
                if reach[i] + reach[j] > 0.0 {
                    check(i, j, &mut viol);
                }
            }
        }
        for i in (0..m).filter(|&i| c.point(i).is_none()) {
            for j in 0..m {
                if j != i && (c.point(j).is_some() || j > i) {
                    check(i, j, &mut viol);
                }
            }
        }
    } else {
        for i in 0..m {
            for j in i + 1..m {
                check(i, j, &mut viol);
            }
        }
    }
    viol.sort_unstable();
    viol.truncate(cap);
    viol.into_iter().map(|(_, i, j)| (i, j)).collect()
}

/// Minimum total cost perfect pairing; pairs are `(i, j)` with `i < j`,
/// sorted by `i`.
pub(crate) fn min_cost_pairing<C: CostModel + ?Sized>(c: &C) -> Result<Vec<(usize, usize)>> {
    let m = c.len();
    if m % 2 == 1 {
        return Err(invalid(format!("cannot pair an odd number ({m}) of entities")));
    }
    if m == 0 {
        return Ok(Vec::new());
    }
    let wts = Weights::new(c.bound());
    let mut k = 10.min(m - 1);
    let mut extra: Vec<(usize, usize)> = Vec::new();
    loop {
        let mut pairs: Vec<(usize, usize)> = extra.clone();
        for (i, near) in c.candidates(k).into_iter().enumerate() {
            for j in near {
                pairs.push((i.min(j), i.max(j)));
            }
        }
        pairs.sort_unstable();
        pairs.dedup();
        let edges: Vec<(usize, usize, i64)> = pairs
            .iter()
            .filter_map(|&(i, j)| c.cost(i, j).map(|d| (i, j, wts.weight(d))))
            .collect();
        let (dual, mate) = greedy_start(m, &edges);
        let out = blossom::solve(m, &edges, &dual, &mate);
        if !out.is_perfect() {
            if k >= m - 1 {
                let v = out.mate.iter().position(|&x| blossom::is_none(x)).unwrap();
                return Err(Error::Infeasible { entity: v });
            }
            k = (2 * k).min(m - 1);
            continue;
        }
        let viol = if k >= m - 1 { Vec::new() } else { price(c, &wts, &out, 8 * m) };
        if viol.is_empty() {
            let mut res: Vec<(usize, usize)> = (0..m)
                .filter(|&i| out.mate[i] > i)
                .map(|i| (i, out.mate[i]))
                .collect();
            res.sort_unstable();
            return Ok(res);
        }
        extra.extend(viol);
        extra.sort_unstable();
        extra.dedup();
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Every perfect pairing of `0..m`, by recursion on the lowest free index.
    pub(crate) fn all_pairings(m: usize) -> Vec<Vec<(usize, usize)>> {
        fn rec(free: &[usize], cur: &mut Vec<(usize, usize)>, out: &mut Vec<Vec<(usize, usize)>>) {
            if free.is_empty() {
                out.push(cur.clone());
                return;
            }
            let a = free[0];
            for t in 1..free.len() {
                let b = free[t];
                let rest: Vec<usize> = free[1..].iter().copied().filter(|&x| x != b).collect();
                cur.push((a, b));
                rec(&rest, cur, out);
                cur.pop();
            }
        }
        let mut out = Vec::new();
        rec(&(0..m).collect::<Vec<_>>(), &mut Vec::new(), &mut out);
        out
    }

    struct Table(Vec<Vec<Option<f64>>>);

    impl CostModel for Table {
        fn len(&self) -> usize {
            self.0.len()
        }
        fn cost(&self, i: usize, j: usize) -> Option<f64> {
            self.0[i][j]
        }
        fn bound(&self) -> f64 {
            self.0.iter().flatten().flatten().fold(0.0, |a, &b| a.max(b))
        }
    }

    fn brute(t: &Table) -> Option<f64> {
        all_pairings(t.len())
            .into_iter()
            .filter_map(|p| p.iter().map(|&(i, j)| t.0[i][j]).sum::<Option<f64>>())
            .min_by(f64::total_cmp)
    }

    struct Pts(Vec<Vec<f64>>);

    impl CostModel for Pts {
        fn len(&self) -> usize {
            self.0.len()
        }
        fn cost(&self, i: usize, j: usize) -> Option<f64> {
            ((i + j) % 7 != 0).then(|| sq_dist(&self.0[i], &self.0[j]))
        }
        fn bound(&self) -> f64 {
            1.0
        }
    }

    #[test]
    fn sweep_matches_brute_force_neighbours() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for round in 0..40 {
            let m = rng.random_range(2..120);
            let dim = rng.random_range(1..4);
            let pts = Pts(
                (0..m)
                    .map(|_| {
                        (0..dim)
                            .map(|_| if round % 2 == 0 { rng.random_range(0..4) as f64 } else { rng.random() })
                            .collect()
                    })
                    .collect(),
            );
            let refs: Vec<Option<&[f64]>> = pts.0.iter().map(|p| Some(p.as_slice())).collect();
            for k in [1, 3, 10] {
                let got = sweep_nearest(&refs, k, &|i, j| (i + j) % 7 != 0);
                let mut want = Vec::new();
                for (i, g) in got.iter().enumerate() {
                    nearest_by_cost(&pts, i, k, &mut want);
                    assert_eq!(g, &want, "round {round}, k {k}, unit {i}");
                }
            }
        }
    }

    #[test]
    fn random_tables_with_forbidden_pairs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let m = 2 * rng.random_range(1..7);
            let mut t = vec![vec![None; m]; m];
            for i in 0..m {
                for j in i + 1..m {
                    if rng.random_bool(0.8) {
                        let c: f64 = rng.random::<f64>() * 10.0;
                        t[i][j] = Some(c);
                        t[j][i] = Some(c);
                    }
                }
            }
            let t = Table(t);
            let got = min_cost_pairing(&t);
            match brute(&t) {
                None => assert!(matches!(got, Err(Error::Infeasible { .. }))),
                Some(best) => {
                    let p = got.unwrap();
                    let c: f64 = p.iter().map(|&(i, j)| t.0[i][j].unwrap()).sum();
                    assert!((c - best).abs() < 1e-9, "{c} vs {best}");
                }
            }
        }
    }
}
