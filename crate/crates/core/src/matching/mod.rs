//! Homogeneous grouping: optimal pairing, k-tuples via cardinality trees,
//! PCA folds, and group pairing for variance estimation.

mod blossom;
mod pairing;
mod tree;

pub use tree::{build_k_tuples, CardinalityTree, KTuples};

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::design::GroupPartition;
use crate::error::{invalid, Error, Result};
use crate::matrix::{sq_dist, Matrix};
pub(crate) use pairing::{min_cost_pairing, sweep_nearest, tie, CostModel};

/// Predicate marking pairs that may not be matched.
pub type Forbidden = dyn Fn(usize, usize) -> bool + Sync;

/// A pairing problem over the rows of `points`.
pub struct MatchProblem<'a> {
    pub points: &'a Matrix,
    /// Symmetric predicate; `true` means the pair is forbidden.
    pub forbidden: Option<&'a Forbidden>,
    /// Fake units pair with anything at zero cost.
    pub fake: Vec<bool>,
}

impl<'a> MatchProblem<'a> {
    pub fn new(points: &'a Matrix) -> Self {
        MatchProblem {
            points,
            forbidden: None,
            fake: vec![false; points.rows()],
        }
    }
}

/// Squared diameter of the bounding box of `points`.
pub(crate) fn box_bound(points: &Matrix) -> f64 {
    let mut b = 0.0;
    for j in 0..points.cols() {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..points.rows() {
            let v = points.get(i, j);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if hi > lo {
            b += (hi - lo) * (hi - lo);
        }
    }
    b
}

struct PointCost<'a> {
    p: &'a MatchProblem<'a>,
    bound: f64,
}

impl CostModel for PointCost<'_> {
    fn len(&self) -> usize {
        self.p.points.rows()
    }

    fn cost(&self, i: usize, j: usize) -> Option<f64> {
        if let Some(f) = self.p.forbidden {
            if f(i, j) {
                return None;
            }
        }
        if self.p.fake[i] || self.p.fake[j] {
            return Some(0.0);
        }
        Some(sq_dist(self.p.points.row(i), self.p.points.row(j)))
    }

    fn bound(&self) -> f64 {
        self.bound
    }

    fn point(&self, i: usize) -> Option<&[f64]> {
        (!self.p.fake[i]).then(|| self.p.points.row(i))
    }

    fn candidates(&self, k: usize) -> Vec<Vec<usize>> {
        if self.p.fake.iter().any(|&f| f) {
            let mut buf = Vec::new();
            return (0..self.len())
                .map(|i| {
                    pairing::nearest_by_cost(self, i, k, &mut buf);
                    buf.clone()
                })
                .collect();
        }
        let pts: Vec<Option<&[f64]>> = (0..self.len()).map(|i| Some(self.p.points.row(i))).collect();
        match self.p.forbidden {
            Some(f) => sweep_nearest(&pts, k, &|i, j| !f(i, j)),
            None => sweep_nearest(&pts, k, &|_, _| true),
        }
    }

    fn is_metric(&self) -> bool {
        true
    }
}

/// A perfect pairing minimizing total squared Euclidean distance.
///
/// Pairs are returned as `(i, j)` with `i < j`, sorted by `i`. Equal-cost
/// optima are resolved deterministically from the input order.
pub fn pair_min_weight(problem: &MatchProblem) -> Result<Vec<(usize, usize)>> {
    let m = problem.points.rows();
    if problem.fake.len() != m {
        return Err(invalid("fake flags do not match point count"));
    }
    let real: Vec<usize> = (0..m).filter(|&i| !problem.fake[i]).collect();
    let bound = box_bound(&problem.points.select_rows(&real));
    min_cost_pairing(&PointCost { p: problem, bound })
}

/// Total squared distance of a pairing.
pub fn pairing_cost(points: &Matrix, pairs: &[(usize, usize)]) -> f64 {
    pairs.iter().map(|&(i, j)| sq_dist(points.row(i), points.row(j))).sum()
}

/// `n^-1 sum_g sum_{i,j in g} |psi_i - psi_j|^2` over all listed groups.
/// `n` is the number of units covered.
pub fn homogeneity_objective(groups: &[Vec<usize>], points: &Matrix) -> f64 {
    let n: usize = groups.iter().map(Vec::len).sum();
    if n == 0 {
        return 0.0;
    }
    let d = points.cols();
    let mut total = 0.0;
    let mut c = vec![0.0; d];
    for g in groups {
        if g.len() < 2 {
            continue;
        }
        c.iter_mut().for_each(|v| *v = 0.0);
        for &i in g {
            for (cj, v) in c.iter_mut().zip(points.row(i)) {
                *cj += v;
            }
        }
        c.iter_mut().for_each(|v| *v /= g.len() as f64);
        let ss: f64 = g.iter().map(|&i| sq_dist(points.row(i), &c)).sum();
        // sum over ordered pairs equals 2|g| times the within sum of squares
        total += 2.0 * g.len() as f64 * ss;
    }
    total / n as f64
}

/// The partition's objective on `points`.
pub fn partition_objective(partition: &GroupPartition, points: &Matrix) -> f64 {
    homogeneity_objective(&partition.groups, points)
}

/// Leading principal direction, sign fixed so the first nonzero coordinate
/// is positive.
fn leading_direction(points: &Matrix) -> Result<Vec<f64>> {
    let (m, d) = (points.rows(), points.cols());
    let mut mean = vec![0.0; d];
    for i in 0..m {
        for (mj, v) in mean.iter_mut().zip(points.row(i)) {
            *mj += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= m as f64);
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for i in 0..m {
        let r = points.row(i);
        for a in 0..d {
            for b in 0..d {
                cov[(a, b)] += (r[a] - mean[a]) * (r[b] - mean[b]);
            }
        }
    }
    cov /= (m.max(2) - 1) as f64;
    let trace: f64 = (0..d).map(|a| cov[(a, a)]).sum();
    if !(trace > 0.0) {
        return Err(invalid("degenerate covariance: all points are identical"));
    }
    let eig = SymmetricEigen::new(cov);
    let mut best = 0;
    for a in 1..d {
        if eig.eigenvalues[a] > eig.eigenvalues[best] {
            best = a;
        }
    }
    let mut v: Vec<f64> = eig.eigenvectors.column(best).iter().copied().collect();
    let tol = 1e-12 * v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    if let Some(first) = v.iter().find(|x| x.abs() > tol) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
    Ok(v)
}

/// Quantile bins of the first principal component projection.
/// Fold sizes differ by at most one; fold 0 holds the smallest projections.
pub fn pca_folds(points: &Matrix, folds: usize) -> Result<Vec<usize>> {
    let m = points.rows();
    if folds == 0 || m < folds {
        return Err(invalid(format!("need 1 <= K <= m, got K={folds}, m={m}")));
    }
    let v = leading_direction(points)?;
    if folds == 1 {
        return Ok(vec![0; m]);
    }
    let proj: Vec<f64> = (0..m)
        .map(|i| points.row(i).iter().zip(&v).map(|(a, b)| a * b).sum())
        .collect();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| proj[a].total_cmp(&proj[b]).then(a.cmp(&b)));
    let mut out = vec![0; m];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = rank * folds / m;
    }
    Ok(out)
}

/// k-tuples built separately inside each PCA fold. Fold remainders are
/// pooled and matched again, leaving at most one remainder overall.
pub fn match_within_folds(points: &Matrix, k: usize, folds: usize, parallel: bool) -> Result<KTuples> {
    let m = points.rows();
    if k == 0 || m < k {
        return Err(invalid(format!("need m >= k >= 1, got m={m}, k={k}")));
    }
    if folds <= 1 {
        return build_k_tuples(points, k);
    }
    let fold = pca_folds(points, folds)?;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); folds];
    for (i, &f) in fold.iter().enumerate() {
        members[f].push(i);
    }
    let run = |idx: &Vec<usize>| -> Result<(Vec<Vec<usize>>, Vec<usize>)> {
        if idx.len() < k {
            return Ok((Vec::new(), idx.clone()));
        }
        let t = build_k_tuples(&points.select_rows(idx), k)?;
        let map = |g: &Vec<usize>| g.iter().map(|&i| idx[i]).collect::<Vec<_>>();
        Ok((t.groups.iter().map(map).collect(), map(&t.remainder)))
    };
    let per_fold: Vec<Result<(Vec<Vec<usize>>, Vec<usize>)>> = if parallel {
        members.par_iter().map(run).collect()
    } else {
        members.iter().map(run).collect()
    };
    let mut groups = Vec::new();
    let mut left = Vec::new();
    for r in per_fold {
        let (g, rem) = r?;
        groups.extend(g);
        left.extend(rem);
    }
    left.sort_unstable();
    let mut remainder;
    if left.len() >= k {
        let t = build_k_tuples(&points.select_rows(&left), k)?;
        groups.extend(t.groups.iter().map(|g| g.iter().map(|&i| left[i]).collect::<Vec<_>>()));
        remainder = t.remainder.iter().map(|&i| left[i]).collect();
    } else {
        remainder = left;
    }
    remainder.sort_unstable();
    let mut all = groups.clone();
    all.push(remainder.clone());
    let objective = homogeneity_objective(&all, points);
    Ok(KTuples {
        groups,
        remainder,
        objective,
    })
}

/// Pairing of groups into unions for collapsed-strata variance estimation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupPairing {
    /// Partner of each group in a two-group union, if any.
    pub mu: Vec<Option<usize>>,
    /// Group indices of every union, sorted; at most one has three
    /// full groups. Remainder groups are attached to the nearest union.
    pub unions: Vec<Vec<usize>>,
}

fn centroid(points: &Matrix, idx: &[usize]) -> Vec<f64> {
    let mut c = vec![0.0; points.cols()];
    for &i in idx {
        for (cj, v) in c.iter_mut().zip(points.row(i)) {
            *cj += v;
        }
    }
    c.iter_mut().for_each(|v| *v /= idx.len().max(1) as f64);
    c
}

struct CentroidCost {
    c: Vec<Vec<f64>>,
    fake: Option<usize>,
    bound: f64,
}

impl CostModel for CentroidCost {
    fn len(&self) -> usize {
        self.c.len() + self.fake.is_some() as usize
    }
    fn cost(&self, i: usize, j: usize) -> Option<f64> {
        if Some(i) == self.fake || Some(j) == self.fake {
            return Some(0.0);
        }
        Some(sq_dist(&self.c[i], &self.c[j]))
    }
    fn bound(&self) -> f64 {
        self.bound
    }
    fn point(&self, i: usize) -> Option<&[f64]> {
        self.c.get(i).map(Vec::as_slice)
    }
    fn is_metric(&self) -> bool {
        true
    }
}

/// Matches group centroids into pairs. With an odd number of full groups the
/// leftover joins the pair whose joint centroid is nearest.
pub fn pair_groups(partition: &GroupPartition, points: &Matrix) -> Result<GroupPairing> {
    let ng = partition.len();
    let full: Vec<usize> = (0..ng)
        .filter(|&g| !partition.remainder[g] && !partition.groups[g].is_empty())
        .collect();
    if full.len() < 2 {
        return Err(invalid(format!(
            "group pairing needs at least 2 full groups, got {}",
            full.len()
        )));
    }
    let cents: Vec<Vec<f64>> = full.iter().map(|&g| centroid(points, &partition.groups[g])).collect();
    let cm = Matrix::from_rows(&cents)?;
    let odd = full.len() % 2 == 1;
    let cost = CentroidCost {
        bound: box_bound(&cm),
        fake: odd.then_some(full.len()),
        c: cents,
    };
    let pairs = min_cost_pairing(&cost)?;
    let mut mu = vec![None; ng];
    let mut unions: Vec<Vec<usize>> = Vec::new();
    let mut leftover = None;
    for (a, b) in pairs {
        if Some(b) == cost.fake {
            leftover = Some(full[a]);
            continue;
        }
        let (ga, gb) = (full[a], full[b]);
        mu[ga] = Some(gb);
        mu[gb] = Some(ga);
        unions.push(vec![ga, gb]);
    }
    let union_centroid = |u: &Vec<usize>| -> Vec<f64> {
        let idx: Vec<usize> = u.iter().flat_map(|&g| partition.groups[g].iter().copied()).collect();
        centroid(points, &idx)
    };
    let nearest = |target: &[f64], unions: &Vec<Vec<usize>>| -> usize {
        let mut best = (f64::INFINITY, 0);
        for (u, members) in unions.iter().enumerate() {
            let d = sq_dist(target, &union_centroid(members));
            if d < best.0 {
                best = (d, u);
            }
        }
        best.1
    };
    if let Some(g) = leftover {
        let u = nearest(&centroid(points, &partition.groups[g]), &unions);
        let (a, b) = (unions[u][0], unions[u][1]);
        mu[a] = None;
        mu[b] = None;
        unions[u].push(g);
    }
    let rems: Vec<usize> = (0..ng)
        .filter(|&g| partition.remainder[g] && !partition.groups[g].is_empty())
        .collect();
    let base = unions.clone();
    for g in rems {
        let u = nearest(&centroid(points, &partition.groups[g]), &base);
        unions[u].push(g);
    }
    for u in unions.iter_mut() {
        u.sort_unstable();
    }
    unions.sort();
    Ok(GroupPairing { mu, unions })
}

/// Error helper shared with the tree module.
pub(crate) fn infeasible(entity: usize) -> Error {
    Error::Infeasible { entity }
}
