//! k-tuples from repeated optimal pairing with fake singleton groups.

use crate::error::{invalid, Result};
use crate::matching::{box_bound, homogeneity_objective, infeasible, min_cost_pairing, sweep_nearest, tie, CostModel};
use crate::matrix::{sq_dist, Matrix};

/// Pairing schedule building groups of exactly `k` real units.
///
/// `J` is the least positive integer with `2^J >= k` and `bits` holds the
/// binary digits of `2^J - k`, least significant first. A fake singleton
/// of type `j` is added before level `j` exactly when `bits[j]` is set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CardinalityTree {
    pub k: usize,
    pub depth: usize,
    pub bits: Vec<bool>,
}

impl CardinalityTree {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 || k > 1 << 20 {
            return Err(invalid(format!("unsupported group size {k}")));
        }
        let mut depth = 1;
        while (1usize << depth) < k {
            depth += 1;
        }
        let gap = (1usize << depth) - k;
        let bits = (0..depth).map(|j| gap >> j & 1 == 1).collect();
        Ok(CardinalityTree { k, depth, bits })
    }

    /// Number of fake singletons added before level `j` when building
    /// `l` groups.
    pub fn fakes_before(&self, level: usize, l: usize) -> usize {
        if self.bits[level] {
            l
        } else {
            0
        }
    }

    /// `sum_{i <= j} a_i`.
    pub fn prefix(&self, level: usize) -> u32 {
        self.bits[..=level].iter().filter(|&&b| b).count() as u32
    }

    /// Whether groups with fake-type masks `a` and `b` may be paired at
    /// level `j`.
    pub fn allowed(&self, level: usize, a: u64, b: u64) -> bool {
        if a & b != 0 {
            return false;
        }
        let u = a | b;
        u == 0 || u.count_ones() == self.prefix(level)
    }
}

/// Groups of exactly `k` units plus a possibly empty remainder.
#[derive(Clone, Debug, PartialEq)]
pub struct KTuples {
    pub groups: Vec<Vec<usize>>,
    pub remainder: Vec<usize>,
    /// Homogeneity objective over all units, remainder included.
    pub objective: f64,
}

struct Entity {
    members: Vec<usize>,
    sum: Vec<f64>,
    mask: u64,
}

impl Entity {
    fn centroid(&self) -> Option<Vec<f64>> {
        if self.members.is_empty() {
            None
        } else {
            let n = self.members.len() as f64;
            Some(self.sum.iter().map(|s| s / n).collect())
        }
    }
}

struct LevelCost<'a> {
    tree: &'a CardinalityTree,
    level: usize,
    masks: Vec<u64>,
    cents: Vec<Option<Vec<f64>>>,
    bound: f64,
}

impl CostModel for LevelCost<'_> {
    fn len(&self) -> usize {
        self.masks.len()
    }

    fn cost(&self, i: usize, j: usize) -> Option<f64> {
        if !self.tree.allowed(self.level, self.masks[i], self.masks[j]) {
            return None;
        }
        match (&self.cents[i], &self.cents[j]) {
            (Some(a), Some(b)) => Some(sq_dist(a, b)),
            _ => Some(0.0),
        }
    }

    fn bound(&self) -> f64 {
        self.bound
    }

    fn point(&self, i: usize) -> Option<&[f64]> {
        self.cents[i].as_deref()
    }

    fn is_metric(&self) -> bool {
        true
    }

    /// Nearest real partners by centroid distance, plus as many partners
    /// involving a fake-only entity (all at cost zero) chosen by hash.
    fn candidates(&self, k: usize) -> Vec<Vec<usize>> {
        let m = self.masks.len();
        let allowed = |i: usize, j: usize| self.tree.allowed(self.level, self.masks[i], self.masks[j]);
        let pts: Vec<Option<&[f64]>> = self.cents.iter().map(|c| c.as_deref()).collect();
        let mut out = sweep_nearest(&pts, k, &allowed);
        let fake_only: Vec<usize> = (0..m).filter(|&j| self.cents[j].is_none()).collect();
        if fake_only.is_empty() {
            return out;
        }
        for (i, list) in out.iter_mut().enumerate() {
            let pool: Vec<usize> = if self.cents[i].is_some() { fake_only.clone() } else { (0..m).collect() };
            let mut free: Vec<(u64, usize)> = pool
                .into_iter()
                .filter(|&j| j != i && allowed(i, j))
                .map(|j| (tie(i.min(j), i.max(j)), j))
                .collect();
            if free.len() > k {
                free.select_nth_unstable(k);
                free.truncate(k);
            }
            list.extend(free.iter().map(|t| t.1));
        }
        out
    }
}

/// The remainder: the point farthest from the centroid and its nearest
/// neighbours.
fn pick_remainder(points: &Matrix, size: usize) -> Vec<usize> {
    let m = points.rows();
    if size == 0 {
        return Vec::new();
    }
    let all: Vec<usize> = (0..m).collect();
    let c = {
        let mut c = vec![0.0; points.cols()];
        for i in 0..m {
            for (cj, v) in c.iter_mut().zip(points.row(i)) {
                *cj += v;
            }
        }
        c.iter_mut().for_each(|v| *v /= m as f64);
        c
    };
    let far = *all
        .iter()
        .max_by(|&&a, &&b| {
            sq_dist(points.row(a), &c)
                .total_cmp(&sq_dist(points.row(b), &c))
                .then(b.cmp(&a))
        })
        .unwrap();
    let mut by_dist: Vec<(f64, usize)> = all
        .iter()
        .map(|&i| (sq_dist(points.row(i), points.row(far)), i))
        .collect();
    by_dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut out: Vec<usize> = vec![far];
    out.extend(by_dist.iter().map(|t| t.1).filter(|&i| i != far).take(size - 1));
    out.sort_unstable();
    out
}

/// Groups of `k` built by `J` rounds of optimal centroid pairing, with the
/// `m mod k` remainder set aside first.
pub fn build_k_tuples(points: &Matrix, k: usize) -> Result<KTuples> {
    let m = points.rows();
    if k == 0 || m < k {
        return Err(invalid(format!("need m >= k >= 1, got m={m}, k={k}")));
    }
    if k == 1 {
        return Ok(KTuples {
            groups: (0..m).map(|i| vec![i]).collect(),
            remainder: Vec::new(),
            objective: 0.0,
        });
    }
    let tree = CardinalityTree::new(k)?;
    let remainder = pick_remainder(points, m % k);
    let mut in_rem = vec![false; m];
    for &i in &remainder {
        in_rem[i] = true;
    }
    let l = (m - remainder.len()) / k;
    let bound = box_bound(points);
    let mut ents: Vec<Entity> = (0..m)
        .filter(|&i| !in_rem[i])
        .map(|i| Entity {
            members: vec![i],
            sum: points.row(i).to_vec(),
            mask: 0,
        })
        .collect();
    for level in 0..tree.depth {
        for _ in 0..tree.fakes_before(level, l) {
            ents.push(Entity {
                members: Vec::new(),
                sum: vec![0.0; points.cols()],
                mask: 1 << level,
            });
        }
        let cost = LevelCost {
            tree: &tree,
            level,
            masks: ents.iter().map(|e| e.mask).collect(),
            cents: ents.iter().map(Entity::centroid).collect(),
            bound,
        };
        let pairs = min_cost_pairing(&cost).map_err(|e| match e {
            crate::error::Error::Infeasible { entity } => infeasible(entity),
            other => other,
        })?;
        let mut slots: Vec<Option<Entity>> = ents.into_iter().map(Some).collect();
        ents = pairs
            .into_iter()
            .map(|(a, b)| {
                let ea = slots[a].take().unwrap();
                let eb = slots[b].take().unwrap();
                let mut members = ea.members;
                members.extend(eb.members);
                members.sort_unstable();
                Entity {
                    members,
                    sum: ea.sum.iter().zip(&eb.sum).map(|(x, y)| x + y).collect(),
                    mask: ea.mask | eb.mask,
                }
            })
            .collect();
    }
    let mut groups: Vec<Vec<usize>> = ents.into_iter().map(|e| e.members).collect();
    debug_assert!(groups.iter().all(|g| g.len() == k));
    groups.sort();
    let mut all = groups.clone();
    all.push(remainder.clone());
    let objective = homogeneity_objective(&all, points);
    Ok(KTuples {
        groups,
        remainder,
        objective,
    })
}
