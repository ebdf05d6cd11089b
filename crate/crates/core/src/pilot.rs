//! Variance functions estimated from pilot data and the feasible optimal
//! design they imply for the main experiment.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::matrix::{sq_dist, Matrix};
use crate::optimal::{
    discretize_propensity, feasibility_rounding, mean, neyman_propensity, optimal_constant_propensity,
    optimal_sampling_propensity, BudgetSpec, ProfileSource, RoundedPropensity, VarianceProfile,
};
use crate::propensity::{Propensity, PropensityMap};

/// Observed pilot experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct PilotData {
    pub psi: Matrix,
    pub y: Vec<f64>,
    pub t: Vec<u8>,
    pub d: Vec<u8>,
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl PilotData {
    pub fn new(psi: Matrix, y: Vec<f64>, t: Vec<u8>, d: Vec<u8>, q: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        let n = psi.rows();
        if [y.len(), t.len(), d.len(), q.len(), p.len()].iter().any(|&l| l != n) {
            return Err(invalid("pilot columns differ in length"));
        }
        for i in 0..n {
            if t[i] > 1 || d[i] > 1 || (d[i] == 1 && t[i] == 0) {
                return Err(invalid(format!("pilot unit {i} has invalid indicators")));
            }
            if t[i] == 1 {
                if !y[i].is_finite() {
                    return Err(invalid(format!("sampled pilot unit {i} has no outcome")));
                }
                if !(q[i] > 0.0 && q[i] <= 1.0 && p[i] > 0.0 && p[i] < 1.0) {
                    return Err(Error::Propensity(format!("pilot unit {i}: q = {}, p = {}", q[i], p[i])));
                }
            }
        }
        if !psi.all_finite() {
            return Err(invalid("pilot covariates must be finite"));
        }
        Ok(PilotData { psi, y, t, d, q, p })
    }

    pub fn len(&self) -> usize {
        self.psi.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn arm(&self, a: u8) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.t[i] == 1 && self.d[i] == a).collect()
    }

    /// Inverse probability weight of sampled unit `i` in its own arm.
    fn weight(&self, i: usize) -> f64 {
        let pd = if self.d[i] == 1 { self.p[i] } else { 1.0 - self.p[i] };
        1.0 / (pd * self.q[i])
    }
}

/// Neighbor count for the nearest-neighbor regressions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bandwidth {
    Fixed(usize),
    /// 5-fold cross-validation over [`K_GRID`].
    CrossValidated,
}

pub const K_GRID: [usize; 7] = [3, 5, 10, 20, 40, 80, 160];

/// Weighted nearest-neighbor average over a fixed training set.
#[derive(Clone, Debug)]
struct Knn {
    x: Vec<Vec<f64>>,
    target: Vec<f64>,
    w: Vec<f64>,
    k: usize,
}

impl Knn {
    fn predict_excluding(&self, at: &[f64], skip: &[bool]) -> f64 {
        let mut d: Vec<(f64, usize)> = (0..self.x.len())
            .filter(|&j| !skip[j])
            .map(|j| (sq_dist(at, &self.x[j]), j))
            .collect();
        let k = self.k.min(d.len());
        if k < d.len() {
            d.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        }
        let (mut s, mut sw) = (0.0, 0.0);
        for &(_, j) in &d[..k] {
            s += self.w[j] * self.target[j];
            sw += self.w[j];
        }
        s / sw
    }

    fn predict(&self, at: &[f64]) -> f64 {
        self.predict_excluding(at, &vec![false; self.x.len()])
    }

    /// Weighted 5-fold cross-validated squared error.
    fn cv_error(&self) -> f64 {
        let n = self.x.len();
        let mut err = 0.0;
        for f in 0..5 {
            let skip: Vec<bool> = (0..n).map(|j| j % 5 == f).collect();
            if skip.iter().all(|&s| s) {
                continue;
            }
            for i in (0..n).filter(|&i| skip[i]) {
                let r = self.target[i] - self.predict_excluding(&self.x[i], &skip);
                err += self.w[i] * r * r;
            }
        }
        err
    }

    fn fit(x: Vec<Vec<f64>>, target: Vec<f64>, w: Vec<f64>, bw: Bandwidth) -> Knn {
        let mut m = Knn { x, target, w, k: 0 };
        m.k = match bw {
            Bandwidth::Fixed(k) => k,
            Bandwidth::CrossValidated => {
                let limit = m.x.len() * 4 / 5;
                let mut best = (f64::INFINITY, 3);
                for &k in K_GRID.iter().filter(|&&k| k <= limit.max(3)) {
                    m.k = k;
                    let e = m.cv_error();
                    if e < best.0 {
                        best = (e, k);
                    }
                }
                best.1
            }
        };
        m
    }
}

/// Fitted conditional mean and variance regressions for one arm.
#[derive(Clone, Debug)]
pub struct ArmFit {
    mean: Knn,
    var: Knn,
}

impl ArmFit {
    pub fn k_mean(&self) -> usize {
        self.mean.k
    }

    pub fn k_var(&self) -> usize {
        self.var.k
    }

    pub fn mean_at(&self, at: &[f64]) -> f64 {
        self.mean.predict(at)
    }

    pub fn variance_at(&self, at: &[f64]) -> f64 {
        self.var.predict(at)
    }
}

/// Two-stage nearest-neighbor fit of `mu_d` and `zeta_d` for both arms.
#[derive(Clone, Debug)]
pub struct VarianceFit {
    pub treated: ArmFit,
    pub control: ArmFit,
    /// Lower clamp on estimated variances.
    pub floor: f64,
}

impl VarianceFit {
    /// Standard deviation profile evaluated at the rows of `psi`.
    pub fn profile(&self, psi: &Matrix) -> Result<VarianceProfile> {
        if psi.cols() != self.treated.mean.x[0].len() {
            return Err(invalid(format!(
                "main covariates have {} columns, the pilot has {}",
                psi.cols(),
                self.treated.mean.x[0].len()
            )));
        }
        let z = |arm: &ArmFit| -> Vec<f64> {
            (0..psi.rows())
                .map(|i| arm.variance_at(psi.row(i)).max(self.floor))
                .collect()
        };
        VarianceProfile::from_variances(&z(&self.treated), &z(&self.control), ProfileSource::Pilot)
    }
}

fn fit_arm(pilot: &PilotData, a: u8, bw: Bandwidth) -> Result<ArmFit> {
    let idx = pilot.arm(a);
    if let Bandwidth::Fixed(k) = bw {
        if k < 3 {
            return Err(invalid(format!("k_neighbors must be at least 3, got {k}")));
        }
        if idx.len() < k {
            return Err(invalid(format!("pilot arm {a} has {} units, fewer than k = {k}", idx.len())));
        }
    } else if idx.len() < 3 {
        return Err(invalid(format!("pilot arm {a} has {} units, need at least 3", idx.len())));
    }
    let x: Vec<Vec<f64>> = idx.iter().map(|&i| pilot.psi.row(i).to_vec()).collect();
    let w: Vec<f64> = idx.iter().map(|&i| pilot.weight(i)).collect();
    let y: Vec<f64> = idx.iter().map(|&i| pilot.y[i]).collect();
    let mean = Knn::fit(x.clone(), y.clone(), w.clone(), bw);
    let resid: Vec<f64> = x.iter().zip(&y).map(|(xi, yi)| (yi - mean.predict(xi)).powi(2)).collect();
    let var = Knn::fit(x, resid, w, bw);
    Ok(ArmFit { mean, var })
}

/// Fits both arms. Regressions are IPW-weighted averages over the `k`
/// nearest sampled units of the arm.
pub fn fit_variance_functions(pilot: &PilotData, bw: Bandwidth) -> Result<VarianceFit> {
    let ys: Vec<f64> = (0..pilot.len()).filter(|&i| pilot.t[i] == 1).map(|i| pilot.y[i]).collect();
    if ys.len() < 2 {
        return Err(invalid("pilot has fewer than 2 sampled units"));
    }
    let m = mean(&ys);
    let var = ys.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (ys.len() - 1) as f64;
    Ok(VarianceFit {
        treated: fit_arm(pilot, 1, bw)?,
        control: fit_arm(pilot, 0, bw)?,
        floor: if var > 0.0 { 1e-6 * var } else { 1e-12 },
    })
}

/// Variance profile for the main experiment units `main_psi`.
pub fn estimate_variance_functions(pilot: &PilotData, main_psi: &Matrix, bw: Bandwidth) -> Result<VarianceProfile> {
    fit_variance_functions(pilot, bw)?.profile(main_psi)
}

/// A discretized design ready for randomization.
#[derive(Clone, Debug, PartialEq)]
pub struct FeasibleDesign {
    pub q: PropensityMap,
    pub p: PropensityMap,
    /// Continuous propensities before discretization.
    pub q_continuous: Vec<f64>,
    pub p_continuous: Vec<f64>,
    pub rounding: RoundedPropensity,
    /// `mean(q c)` under the discretized map.
    pub spent: f64,
    /// Spending is more than 5% away from the budget.
    pub budget_flag: bool,
}

/// Optimal propensities from `profile`, made feasible and discretized to
/// `a / k_max` with at most `l_max` levels per map.
pub fn feasible_optimal_design(
    profile: &VarianceProfile,
    budget: &BudgetSpec,
    k_max: u32,
    l_max: usize,
    constant_p: bool,
) -> Result<FeasibleDesign> {
    if k_max < 2 {
        return Err(invalid("k_max must be at least 2"));
    }
    let n = profile.len();
    let p_continuous = if constant_p {
        vec![optimal_constant_propensity(profile); n]
    } else {
        neyman_propensity(profile)
    };
    let q_raw = optimal_sampling_propensity(profile, &p_continuous, budget)?;
    let rounding = feasibility_rounding(&q_raw, &budget.costs, budget.budget)?;
    let q = discretize_propensity(&rounding.q, k_max, l_max)?;
    let (lo, hi) = (1.0 / k_max as f64, (k_max - 1) as f64 / k_max as f64);
    let clamped: Vec<f64> = p_continuous.iter().map(|v| v.clamp(lo, hi)).collect();
    let p = discretize_propensity(&clamped, k_max, l_max)?;
    let spent = q.as_f64().iter().zip(&budget.costs).map(|(a, c)| a * c).sum::<f64>() / n as f64;
    let target = if rounding.saturated { budget.mean_cost() } else { budget.budget };
    Ok(FeasibleDesign {
        budget_flag: (spent - target).abs() > 0.05 * target,
        q,
        p,
        q_continuous: rounding.q.clone(),
        p_continuous,
        rounding,
        spent,
    })
}

/// Constant propensity for a small pilot.
#[derive(Clone, Debug, PartialEq)]
pub struct SmallPilot {
    pub p: Propensity,
    /// `s1 / (s1 + s0)` before rounding.
    pub p_raw: f64,
    pub s1: f64,
    pub s0: f64,
    /// A regression was singular and arm standard deviations were used.
    pub fallback: bool,
    pub warnings: Vec<String>,
}

/// Root-mean-square residual of `y ~ 1 + psi`, or `None` if singular.
fn rms_residual(x: &Matrix, idx: &[usize], y: &[f64]) -> Option<f64> {
    let p = x.cols() + 1;
    if idx.len() <= p {
        return None;
    }
    let a = DMatrix::from_fn(idx.len(), p, |r, c| if c == 0 { 1.0 } else { x.get(idx[r], c - 1) });
    let b = DVector::from_iterator(idx.len(), idx.iter().map(|&i| y[i]));
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if svd.rank(smax * 1e-10) < p {
        return None;
    }
    let beta = svd.solve(&b, smax * 1e-10).ok()?;
    let e = b - a * beta;
    Some((e.norm_squared() / idx.len() as f64).sqrt())
}

fn arm_sd(idx: &[usize], y: &[f64]) -> f64 {
    let ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let m = mean(&ys);
    (ys.iter().map(|v| (v - m).powi(2)).sum::<f64>() / ys.len() as f64).sqrt()
}

/// `s1 / (s1 + s0)` from per-arm linear residuals, rounded to the nearest
/// `a/k` with `k <= k_max`. Warns when `k_max^2 > n_main`.
pub fn small_pilot_constant(pilot: &PilotData, k_max: u32, n_main: Option<usize>) -> Result<SmallPilot> {
    if k_max < 2 {
        return Err(invalid("k_max must be at least 2"));
    }
    let mut fallback = false;
    let mut s = [0.0; 2];
    for a in 0..2u8 {
        let idx = pilot.arm(a);
        if idx.len() < 2 {
            return Err(invalid(format!("pilot arm {a} has {} units, need at least 2", idx.len())));
        }
        s[a as usize] = match rms_residual(&pilot.psi, &idx, &pilot.y) {
            Some(v) => v,
            None => {
                fallback = true;
                arm_sd(&idx, &pilot.y)
            }
        };
    }
    let [s0, s1] = s;
    let p_raw = if s1 + s0 > 0.0 { s1 / (s1 + s0) } else { 0.5 };
    let lo = 1.0 / k_max as f64;
    let mut p = Propensity::nearest(p_raw.clamp(lo, 1.0 - lo), k_max)?;
    if p.is_one() {
        p = Propensity::new(k_max - 1, k_max)?;
    }
    let mut warnings = Vec::new();
    if fallback {
        warnings.push("singular pilot regression; used arm standard deviations".to_string());
    }
    if let Some(n) = n_main {
        if (k_max as usize).pow(2) > n {
            warnings.push(format!(
                "k_max^2 = {} exceeds the main experiment size {n}; a coarser grid may discretize better",
                k_max * k_max
            ));
        }
    }
    Ok(SmallPilot {
        p,
        p_raw,
        s1,
        s0,
        fallback,
        warnings,
    })
}
