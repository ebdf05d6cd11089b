//! Budget-constrained optimal propensities, their feasible and discrete
//! implementations, and the alternating design.

mod maxcut;

pub use maxcut::{alternating_design, brute_force_balance, AlternatingDesign, CutMode};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::propensity::{Propensity, PropensityMap};

/// Where a variance profile came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileSource {
    Oracle,
    Pilot,
}

/// Conditional outcome standard deviations `sigma_d(psi_i)` per unit.
#[derive(Clone, Debug, PartialEq)]
pub struct VarianceProfile {
    pub sigma1: Vec<f64>,
    pub sigma0: Vec<f64>,
    pub source: ProfileSource,
}

impl VarianceProfile {
    pub fn new(sigma1: Vec<f64>, sigma0: Vec<f64>, source: ProfileSource) -> Result<Self> {
        if sigma1.len() != sigma0.len() || sigma1.is_empty() {
            return Err(invalid("sigma1 and sigma0 must be non-empty and equally long"));
        }
        if let Some(i) = sigma1
            .iter()
            .chain(&sigma0)
            .position(|s| !(s.is_finite() && *s > 0.0))
        {
            return Err(invalid(format!(
                "standard deviation at position {} is not positive and finite",
                i % sigma1.len()
            )));
        }
        Ok(VarianceProfile { sigma1, sigma0, source })
    }

    /// From conditional variances `zeta_d`.
    pub fn from_variances(zeta1: &[f64], zeta0: &[f64], source: ProfileSource) -> Result<Self> {
        Self::new(
            zeta1.iter().map(|v| v.sqrt()).collect(),
            zeta0.iter().map(|v| v.sqrt()).collect(),
            source,
        )
    }

    /// Unit standard deviations in both arms.
    pub fn homoskedastic(n: usize) -> Self {
        VarianceProfile {
            sigma1: vec![1.0; n],
            sigma0: vec![1.0; n],
            source: ProfileSource::Oracle,
        }
    }

    pub fn len(&self) -> usize {
        self.sigma1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma1.is_empty()
    }

    /// `sqrt(sigma1^2 / p + sigma0^2 / (1 - p))` per unit.
    pub fn ex_ante_sd(&self, p: &[f64]) -> Result<Vec<f64>> {
        if p.len() != self.len() {
            return Err(invalid("assignment propensities do not match the profile"));
        }
        p.iter()
            .zip(self.sigma1.iter().zip(&self.sigma0))
            .map(|(&p, (s1, s0))| {
                if !(p > 0.0 && p < 1.0) {
                    return Err(invalid(format!("assignment propensity {p} outside (0, 1)")));
                }
                Ok((s1 * s1 / p + s0 * s0 / (1.0 - p)).sqrt())
            })
            .collect()
    }
}

/// Per-eligible-unit budget `B` with unit costs.
#[derive(Clone, Debug, PartialEq)]
pub struct BudgetSpec {
    pub budget: f64,
    pub costs: Vec<f64>,
}

impl BudgetSpec {
    pub fn new(budget: f64, costs: Vec<f64>) -> Result<Self> {
        if !(budget.is_finite() && budget > 0.0) {
            return Err(Error::Budget(format!("budget must be positive, got {budget}")));
        }
        if let Some(i) = costs.iter().position(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(Error::Budget(format!("cost of unit {i} is not positive")));
        }
        if costs.is_empty() {
            return Err(Error::Budget("no units".into()));
        }
        Ok(BudgetSpec { budget, costs })
    }

    pub fn mean_cost(&self) -> f64 {
        mean(&self.costs)
    }

    /// Sampling everyone costs no more than the budget.
    pub fn is_slack(&self) -> bool {
        self.budget > self.mean_cost() * (1.0 + 1e-12)
    }
}

pub(crate) fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Conditional Neyman allocation `sigma1 / (sigma1 + sigma0)`.
pub fn neyman_propensity(profile: &VarianceProfile) -> Vec<f64> {
    profile
        .sigma1
        .iter()
        .zip(&profile.sigma0)
        .map(|(s1, s0)| s1 / (s1 + s0))
        .collect()
}

/// Best constant assignment propensity under fine stratification.
pub fn optimal_constant_propensity(profile: &VarianceProfile) -> f64 {
    let v1 = profile.sigma1.iter().map(|s| s * s).sum::<f64>() / profile.len() as f64;
    let v0 = profile.sigma0.iter().map(|s| s * s).sum::<f64>() / profile.len() as f64;
    v1.sqrt() / (v1.sqrt() + v0.sqrt())
}

/// Interior solution of the budget problem,
/// `q_i = B sigmabar_i c_i^{-1/2} / mean(sigmabar c^{1/2})`. Values above 1
/// are left for [`feasibility_rounding`].
pub fn optimal_sampling_propensity(profile: &VarianceProfile, p: &[f64], budget: &BudgetSpec) -> Result<Vec<f64>> {
    if budget.costs.len() != profile.len() {
        return Err(invalid("costs do not match the profile"));
    }
    let sd = profile.ex_ante_sd(p)?;
    Ok(proportional(&sd, &budget.costs, budget.budget))
}

fn proportional(sd: &[f64], costs: &[f64], b: f64) -> Vec<f64> {
    let norm = sd.iter().zip(costs).map(|(s, c)| s * c.sqrt()).sum::<f64>() / sd.len() as f64;
    sd.iter().zip(costs).map(|(s, c)| b * s / c.sqrt() / norm).collect()
}

/// Output of [`feasibility_rounding`].
#[derive(Clone, Debug, PartialEq)]
pub struct RoundedPropensity {
    pub q: Vec<f64>,
    /// Units clamped to 1, in the order they were frozen.
    pub frozen: Vec<usize>,
    /// The budget covers sampling everyone; `q` is all ones and spends
    /// less than `B`.
    pub saturated: bool,
}

/// Repeatedly clamps the largest `q_j > 1` to 1 and rescales the others
/// over the residual budget. `mean(q c) = B` holds after every step.
pub fn feasibility_rounding(q: &[f64], costs: &[f64], budget: f64) -> Result<RoundedPropensity> {
    let n = q.len();
    if n == 0 || costs.len() != n {
        return Err(invalid("q and costs must be non-empty and equally long"));
    }
    if q.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(invalid("sampling propensities must be positive and finite"));
    }
    let spec = BudgetSpec::new(budget, costs.to_vec())?;
    let spent = q.iter().zip(costs).map(|(a, c)| a * c).sum::<f64>() / n as f64;
    if (spent - budget).abs() > 1e-9 * budget.max(1.0) {
        return Err(Error::Budget(format!("mean(q c) = {spent} but the budget is {budget}")));
    }
    if spec.is_slack() {
        return Ok(RoundedPropensity {
            q: vec![1.0; n],
            frozen: (0..n).collect(),
            saturated: true,
        });
    }
    let mut cur = q.to_vec();
    let mut frozen_mask = vec![false; n];
    let mut frozen = Vec::new();
    let mut frozen_cost = 0.0;
    loop {
        let top = (0..n)
            .filter(|&i| !frozen_mask[i] && cur[i] > 1.0)
            .max_by(|&a, &b| cur[a].total_cmp(&cur[b]).then(b.cmp(&a)));
        let Some(j) = top else { break };
        frozen_mask[j] = true;
        frozen.push(j);
        frozen_cost += costs[j];
        cur[j] = 1.0;
        let rest = n - frozen.len();
        if rest == 0 {
            break;
        }
        let residual = (budget - frozen_cost / n as f64) / (rest as f64 / n as f64);
        if residual <= 0.0 {
            return Err(Error::Budget(format!(
                "residual budget {residual} is not positive after freezing {} units",
                frozen.len()
            )));
        }
        let norm = (0..n)
            .filter(|&i| !frozen_mask[i])
            .map(|i| q[i] * costs[i])
            .sum::<f64>()
            / rest as f64;
        for i in 0..n {
            if !frozen_mask[i] {
                cur[i] = residual * q[i] / norm;
            }
        }
    }
    Ok(RoundedPropensity {
        q: cur,
        frozen,
        saturated: false,
    })
}

/// `round(x k)` with halves going down, clamped to `1..=k`.
fn grid_index(x: f64, k: u32) -> u32 {
    let a = (x * k as f64 - 0.5 - 1e-9).ceil();
    a.clamp(1.0, k as f64) as u32
}

/// Nearest `a / k_max` with `1 <= a <= k_max`; halves go down.
pub fn round_to_grid(x: f64, k_max: u32) -> Result<Propensity> {
    if k_max == 0 {
        return Err(invalid("k_max must be positive"));
    }
    Propensity::new(grid_index(x, k_max), k_max)
}

/// Minimizes `mean((q_k - q)^2)` over maps with at most `l_max` levels of
/// the form `a / k_max`, by dynamic programming over sorted values.
pub fn discretize_propensity(q: &[f64], k_max: u32, l_max: usize) -> Result<PropensityMap> {
    if q.is_empty() {
        return Err(invalid("no propensities to discretize"));
    }
    if k_max < 1 || l_max < 1 {
        return Err(invalid("need k_max >= 1 and at least one level"));
    }
    if let Some(i) = q.iter().position(|v| !(v.is_finite() && *v > 0.0 && *v <= 1.0 + 1e-12)) {
        return Err(invalid(format!("propensity of unit {i} ({}) outside (0, 1]", q[i])));
    }
    let mut vals: Vec<f64> = q.to_vec();
    vals.sort_by(f64::total_cmp);
    vals.dedup();
    let m = vals.len();
    let mut w = vec![0.0; m];
    for &v in q {
        let i = vals.partition_point(|&x| x < v);
        w[i] += 1.0;
    }
    let (mut s0, mut s1, mut s2) = (vec![0.0; m + 1], vec![0.0; m + 1], vec![0.0; m + 1]);
    for i in 0..m {
        s0[i + 1] = s0[i] + w[i];
        s1[i + 1] = s1[i] + w[i] * vals[i];
        s2[i + 1] = s2[i] + w[i] * vals[i] * vals[i];
    }
    let k = k_max as f64;
    // best level and squared error of the cluster vals[a..b]
    let cluster = |a: usize, b: usize| -> (u32, f64) {
        let (c0, c1, c2) = (s0[b] - s0[a], s1[b] - s1[a], s2[b] - s2[a]);
        let g = grid_index(c1 / c0, k_max);
        let gv = g as f64 / k;
        (g, (c2 - 2.0 * gv * c1 + gv * gv * c0).max(0.0))
    };
    let levels = l_max.min(m);
    // cost[l][b]: best error for vals[..b] with l clusters
    let inf = f64::INFINITY;
    let mut cost = vec![vec![inf; m + 1]; levels + 1];
    let mut cut = vec![vec![0usize; m + 1]; levels + 1];
    cost[0][0] = 0.0;
    for l in 1..=levels {
        for b in l..=m {
            let mut best = (inf, 0);
            for a in (l - 1)..b {
                if cost[l - 1][a] == inf {
                    continue;
                }
                let c = cost[l - 1][a] + cluster(a, b).1;
                if c < best.0 {
                    best = (c, a);
                }
            }
            cost[l][b] = best.0;
            cut[l][b] = best.1;
        }
    }
    let mut best_l = 1;
    for l in 2..=levels {
        if cost[l][m] < cost[best_l][m] - 1e-15 {
            best_l = l;
        }
    }
    let mut level_of = vec![0u32; m];
    let (mut l, mut b) = (best_l, m);
    while l > 0 {
        let a = cut[l][b];
        let (g, _) = cluster(a, b);
        level_of[a..b].iter_mut().for_each(|x| *x = g);
        b = a;
        l -= 1;
    }
    let values = q
        .iter()
        .map(|&v| {
            let i = vals.partition_point(|&x| x < v);
            Propensity::new(level_of[i], k_max)
        })
        .collect::<Result<Vec<_>>>()?;
    PropensityMap::new(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn prof(s1: &[f64], s0: &[f64]) -> VarianceProfile {
        VarianceProfile::new(s1.to_vec(), s0.to_vec(), ProfileSource::Oracle).unwrap()
    }

    #[test]
    fn neyman_examples() {
        assert_eq!(neyman_propensity(&prof(&[2.0], &[2.0])), vec![0.5]);
        assert_eq!(neyman_propensity(&prof(&[3.0], &[1.0])), vec![0.75]);
        assert_eq!(neyman_propensity(&prof(&[1.0], &[3.0])), vec![0.25]);
    }

    #[test]
    fn constant_propensity_examples() {
        assert_eq!(optimal_constant_propensity(&prof(&[1.0, 1.0], &[1.0, 1.0])), 0.5);
        assert!((optimal_constant_propensity(&prof(&[3.0; 4], &[1.0; 4])) - 0.75).abs() < 1e-15);
        let p = optimal_constant_propensity(&prof(&[1.0, 3.0], &[1.0, 1.0]));
        let expect = 5f64.sqrt() / (5f64.sqrt() + 1.0);
        assert!((p - expect).abs() < 1e-15);
        assert!((p - 0.691).abs() < 1e-3);
    }

    #[test]
    fn homoskedastic_sampling_is_inverse_root_cost() {
        let costs = vec![1.0, 4.0, 9.0, 16.0];
        let b = BudgetSpec::new(2.0, costs.clone()).unwrap();
        let q = optimal_sampling_propensity(&VarianceProfile::homoskedastic(4), &[0.5; 4], &b).unwrap();
        for i in 0..4 {
            assert!((q[i] * costs[i].sqrt() - q[0]).abs() < 1e-12);
        }
        let spent: f64 = q.iter().zip(&costs).map(|(a, c)| a * c).sum::<f64>() / 4.0;
        assert!((spent - 2.0).abs() < 1e-12);
    }

    #[test]
    fn unit_costs_sample_proportional_to_ex_ante_sd() {
        let p = prof(&[1.0, 2.0, 3.0], &[1.0, 1.0, 2.0]);
        let b = BudgetSpec::new(0.4, vec![1.0; 3]).unwrap();
        let q = optimal_sampling_propensity(&p, &[0.5; 3], &b).unwrap();
        let sd = p.ex_ante_sd(&[0.5; 3]).unwrap();
        for i in 0..3 {
            assert!((q[i] - 0.4 * sd[i] / mean(&sd)).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_units_get_budget_over_cost() {
        let b = BudgetSpec::new(1.5, vec![3.0; 5]).unwrap();
        let q = optimal_sampling_propensity(&prof(&[2.0; 5], &[1.0; 5]), &[0.4; 5], &b).unwrap();
        assert!(q.iter().all(|v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn rounding_noop_and_hand_trace() {
        let r = feasibility_rounding(&[0.5, 0.7], &[1.0, 1.0], 0.6).unwrap();
        assert_eq!(r.q, vec![0.5, 0.7]);
        assert!(r.frozen.is_empty());
        let r = feasibility_rounding(&[1.4, 0.6], &[1.0, 1.0], 1.0).unwrap();
        assert_eq!(r.q, vec![1.0, 1.0]);
        assert_eq!(r.frozen, vec![0]);
        assert!(!r.saturated);
        let r = feasibility_rounding(&[1.4, 0.6, 0.5, 0.5], &[1.0; 4], 0.75).unwrap();
        assert_eq!(r.frozen, vec![0]);
        assert!((r.q[1] - 0.75).abs() < 1e-12);
        assert!((r.q[2] - 0.625).abs() < 1e-12);
        let r = feasibility_rounding(&[0.5, 0.5], &[1.0, 1.0], 0.5).unwrap();
        assert!(!r.saturated);
        let r = feasibility_rounding(&[0.9, 1.5], &[2.0, 2.0], 2.4).unwrap();
        assert!(r.saturated);
        assert_eq!(r.q, vec![1.0, 1.0]);
    }

    #[test]
    fn rounding_rejects_mismatched_budget() {
        assert!(matches!(
            feasibility_rounding(&[0.5], &[1.0], 0.4),
            Err(Error::Budget(_))
        ));
    }

    /// Reference recursion written directly from the clamp-and-rescale rule.
    fn rounding_oracle(q: &[f64], c: &[f64], b: f64) -> Vec<f64> {
        let n = q.len() as f64;
        let mut frozen: Vec<usize> = Vec::new();
        let mut cur = q.to_vec();
        while let Some(j) = (0..q.len())
            .filter(|i| !frozen.contains(i))
            .filter(|&i| cur[i] > 1.0)
            .max_by(|&a, &b| cur[a].partial_cmp(&cur[b]).unwrap().then(b.cmp(&a)))
        {
            frozen.push(j);
            let fc: f64 = frozen.iter().map(|&i| c[i]).sum();
            let r = (b - fc / n) / (1.0 - frozen.len() as f64 / n);
            let rest: Vec<usize> = (0..q.len()).filter(|i| !frozen.contains(i)).collect();
            let norm: f64 = rest.iter().map(|&i| q[i] * c[i]).sum::<f64>() / rest.len() as f64;
            for i in 0..q.len() {
                cur[i] = if frozen.contains(&i) { 1.0 } else { r * q[i] / norm };
            }
        }
        cur
    }

    #[test]
    fn rounding_matches_oracle_and_keeps_budget() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let mut deep = 0;
        for _ in 0..300 {
            let n = rng.random_range(2..30);
            let sd: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..10.0f64).powi(2)).collect();
            let c: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..20.0)).collect();
            let mc = mean(&c);
            let b = rng.random_range(0.05..0.95) * mc;
            let q = proportional(&sd, &c, b);
            let r = feasibility_rounding(&q, &c, b).unwrap();
            let o = rounding_oracle(&q, &c, b);
            for i in 0..n {
                assert!((r.q[i] - o[i]).abs() < 1e-9, "{:?} {:?}", r.q, o);
            }
            assert!(r.q.iter().all(|&v| v > 0.0 && v <= 1.0));
            let spent: f64 = r.q.iter().zip(&c).map(|(a, c)| a * c).sum::<f64>() / n as f64;
            assert!((spent - b).abs() <= 1e-9 * b);
            if r.frozen.len() >= 3 {
                deep += 1;
            }
        }
        assert!(deep > 10);
    }

    #[test]
    fn discretize_examples() {
        let m = discretize_propensity(&[0.35; 4], 10, 3).unwrap();
        assert!(m.values().iter().all(|p| *p == Propensity::new(3, 10).unwrap()));
        let m = discretize_propensity(&[0.2, 0.21, 0.8, 0.79], 10, 2).unwrap();
        assert_eq!(m.levels(), &[Propensity::new(1, 5).unwrap(), Propensity::new(4, 5).unwrap()]);
        assert_eq!(m.get(1), Propensity::new(1, 5).unwrap());
    }

    /// Exhaustive search over every assignment of units to at most `l`
    /// grid levels.
    fn discretize_oracle(q: &[f64], k: u32, l: usize) -> f64 {
        let grid: Vec<f64> = (1..=k).map(|a| a as f64 / k as f64).collect();
        let mut best = f64::INFINITY;
        let mut chosen = Vec::new();
        fn rec(start: usize, l: usize, grid: &[f64], q: &[f64], chosen: &mut Vec<f64>, best: &mut f64) {
            if !chosen.is_empty() {
                let e: f64 = q
                    .iter()
                    .map(|v| chosen.iter().map(|g| (g - v).powi(2)).fold(f64::INFINITY, f64::min))
                    .sum();
                *best = best.min(e);
            }
            if chosen.len() == l {
                return;
            }
            for i in start..grid.len() {
                chosen.push(grid[i]);
                rec(i + 1, l, grid, q, chosen, best);
                chosen.pop();
            }
        }
        rec(0, l, &grid, q, &mut chosen, &mut best);
        best
    }

    #[test]
    fn discretize_matches_exhaustive_search() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let n = rng.random_range(1..12);
            let k = rng.random_range(2..9);
            let l = rng.random_range(1..4);
            let q: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
            let m = discretize_propensity(&q, k, l).unwrap();
            assert!(m.levels().len() <= l);
            let err: f64 = q.iter().zip(m.as_f64()).map(|(a, b)| (a - b).powi(2)).sum();
            let best = discretize_oracle(&q, k, l);
            assert!((err - best).abs() < 1e-12, "{q:?} k={k} l={l}: {err} vs {best}");
        }
    }

    proptest! {
        #[test]
        fn fine_grid_error_is_half_step(q in prop::collection::vec(0.01f64..1.0, 1..40), k in 2u32..50) {
            let m = discretize_propensity(&q, k, q.len()).unwrap();
            let k = k as f64;
            for (a, b) in q.iter().zip(m.as_f64()) {
                // below 1/(2k) the nearest allowed level is 1/k
                prop_assert!((a - b).abs() <= (0.5 / k).max(1.0 / k - a) + 1e-12);
            }
        }

        #[test]
        fn neyman_label_swap(s1 in prop::collection::vec(0.01f64..100.0, 1..20), seed in 0u64..1000) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let s0: Vec<f64> = s1.iter().map(|_| rng.random_range(0.01..100.0)).collect();
            let a = neyman_propensity(&prof(&s1, &s0));
            let b = neyman_propensity(&prof(&s0, &s1));
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x + y - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn sampling_monotone_in_cost_and_sd(seed in 0u64..500) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = 6;
            let s1: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..3.0)).collect();
            let s0: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..3.0)).collect();
            let c: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..5.0)).collect();
            let b = BudgetSpec::new(0.3, c.clone()).unwrap();
            let base = optimal_sampling_propensity(&prof(&s1, &s0), &[0.5; 6], &b).unwrap();
            let mut c2 = c.clone();
            c2[0] *= 1.5;
            let up = optimal_sampling_propensity(&prof(&s1, &s0), &[0.5; 6], &BudgetSpec::new(0.3, c2).unwrap()).unwrap();
            prop_assert!(up[0] <= base[0]);
            let mut s2 = s1.clone();
            s2[0] *= 1.5;
            let up = optimal_sampling_propensity(&prof(&s2, &s0), &[0.5; 6], &b).unwrap();
            prop_assert!(up[0] >= base[0]);
        }
    }
}
