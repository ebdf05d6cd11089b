//! Point estimates of the ATE and collapsed-strata inference.

mod normal;

pub use normal::{normal_cdf, normal_quantile, two_sided_p};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::Serialize;

use crate::design::{DesignResult, GroupPartition};
use crate::error::{invalid, Error, Result};
use crate::matching::{pair_groups, GroupPairing};
use crate::matrix::Matrix;
use crate::propensity::PropensityMap;
use crate::rng::RandomSource;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct VarianceComponents {
    pub sample_var: f64,
    pub v1: f64,
    pub v0: f64,
    pub v01: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct VarianceEstimate {
    pub components: VarianceComponents,
    /// `sample_var - v1 - v0 - 2 v01`, before flooring.
    pub raw: f64,
    pub v_hat: f64,
    pub floored: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Flags {
    pub variance_floored: bool,
    /// More than a tenth of the sampled units sit in remainder groups.
    pub remainder_heavy: bool,
    pub subvector_warning: bool,
}

/// How the variance is estimated from a realized design.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMethod {
    /// Collapsed strata over the assignment groups.
    #[default]
    CollapsedStrata,
    /// Sampling was complete randomization: collapsed strata among the
    /// sampled units with `q = 1`, rescaled to the eligible population.
    CompleteSampling,
    /// Both stages were complete randomization: the Neyman variance.
    Complete,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimateReport {
    pub theta_hat: f64,
    pub v_hat: f64,
    pub components: VarianceComponents,
    pub ci: (f64, f64),
    pub alpha: f64,
    pub n_eligible: usize,
    pub n_sampled: usize,
    pub method: VarianceMethod,
    pub flags: Flags,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SateBound {
    /// IPW estimate of `E[(zeta1/p + zeta0/(1-p)) / q]`.
    pub residual: f64,
    /// `max(0, (sigma1 - sigma0)^2)`.
    pub bound_term: f64,
    pub v: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Balance {
    pub beta: f64,
    pub se: f64,
    pub p_value: f64,
}

fn check_indicators(y: &[f64], d: &[u8], t: &[u8]) -> Result<()> {
    let n = t.len();
    if n == 0 {
        return Err(invalid("no units"));
    }
    if y.len() != n || d.len() != n {
        return Err(invalid(format!(
            "outcome, treatment and sampling vectors differ in length ({}, {}, {n})",
            y.len(),
            d.len()
        )));
    }
    for i in 0..n {
        if t[i] > 1 || d[i] > 1 {
            return Err(invalid(format!("unit {i} has a non-binary indicator")));
        }
        if t[i] == 1 && !y[i].is_finite() {
            return Err(invalid(format!("sampled unit {i} has no finite outcome")));
        }
    }
    Ok(())
}

/// Checks the propensities of sampled units and returns them as floats.
fn weights(t: &[u8], q: &PropensityMap, p: &PropensityMap) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = t.len();
    if q.len() != n || p.len() != n {
        return Err(invalid("propensity maps must cover every unit"));
    }
    for i in (0..n).filter(|&i| t[i] == 1) {
        let pi = p.get(i);
        if pi.num() == 0 || pi.is_one() {
            return Err(Error::Propensity(format!(
                "sampled unit {i} has assignment propensity {pi}, need 0 < p < 1"
            )));
        }
        if q.get(i).num() == 0 {
            return Err(Error::Propensity(format!("sampled unit {i} has sampling propensity 0")));
        }
    }
    Ok((q.as_f64(), p.as_f64()))
}

fn obs(y: &[f64], t: &[u8], i: usize) -> f64 {
    if t[i] == 1 {
        y[i]
    } else {
        0.0
    }
}

/// `mean(y | D=1, T=1) - mean(y | D=0, T=1)`.
pub fn difference_of_means(y: &[f64], d: &[u8], t: &[u8]) -> Result<f64> {
    check_indicators(y, d, t)?;
    let (mut s, mut c) = ([0.0; 2], [0usize; 2]);
    for i in (0..t.len()).filter(|&i| t[i] == 1) {
        s[d[i] as usize] += y[i];
        c[d[i] as usize] += 1;
    }
    if c[0] == 0 || c[1] == 0 {
        return Err(invalid(format!("empty arm: {} treated, {} control", c[1], c[0])));
    }
    Ok(s[1] / c[1] as f64 - s[0] / c[0] as f64)
}

/// The double-IPW estimator, averaging over all eligible units.
pub fn double_ipw(y: &[f64], d: &[u8], t: &[u8], q: &PropensityMap, p: &PropensityMap) -> Result<f64> {
    check_indicators(y, d, t)?;
    let (qf, pf) = weights(t, q, p)?;
    let n = t.len();
    let s: f64 = (0..n)
        .filter(|&i| t[i] == 1)
        .map(|i| {
            if d[i] == 1 {
                y[i] / (qf[i] * pf[i])
            } else {
                -y[i] / (qf[i] * (1.0 - pf[i]))
            }
        })
        .sum();
    Ok(s / n as f64)
}

/// The doubly augmented IPW estimator with outcome predictions `mu1`,
/// `mu0` for every eligible unit, each fit without the unit's own fold.
pub fn aipw2(
    y: &[f64],
    d: &[u8],
    t: &[u8],
    q: &PropensityMap,
    p: &PropensityMap,
    mu1: &[f64],
    mu0: &[f64],
) -> Result<f64> {
    check_indicators(y, d, t)?;
    let (qf, pf) = weights(t, q, p)?;
    let n = t.len();
    if mu1.len() != n || mu0.len() != n {
        return Err(invalid("predictions must cover every unit"));
    }
    if mu1.iter().chain(mu0).any(|v| !v.is_finite()) {
        return Err(invalid("predictions must be finite"));
    }
    let mut s = 0.0;
    for i in 0..n {
        s += mu1[i] - mu0[i];
        if t[i] == 1 {
            s += if d[i] == 1 {
                (y[i] - mu1[i]) / (qf[i] * pf[i])
            } else {
                -(y[i] - mu0[i]) / (qf[i] * (1.0 - pf[i]))
            };
        }
    }
    Ok(s / n as f64)
}

/// A random split of `0..n` into two folds of sizes `ceil(n/2)`, `floor(n/2)`.
pub fn random_halves(n: usize, rng: &RandomSource) -> Vec<u8> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng.stream("estimate/folds", 0));
    let mut folds = vec![0u8; n];
    for &i in &idx[n.div_ceil(2)..] {
        folds[i] = 1;
    }
    folds
}

/// Cross-fit linear predictions: for each fold and arm, least squares of
/// `y` on `(1, x)` among sampled units of that arm in the other fold.
pub fn cross_fit_linear(x: &Matrix, y: &[f64], d: &[u8], t: &[u8], folds: &[u8]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_indicators(y, d, t)?;
    let n = t.len();
    if x.rows() != n || folds.len() != n {
        return Err(invalid("covariates and folds must cover every unit"));
    }
    let design_row = |i: usize| std::iter::once(1.0).chain(x.row(i).iter().copied());
    let mut out = [vec![0.0; n], vec![0.0; n]];
    for f in 0..2u8 {
        for arm in 0..2u8 {
            let train: Vec<usize> = (0..n).filter(|&i| folds[i] != f && t[i] == 1 && d[i] == arm).collect();
            if train.is_empty() {
                return Err(invalid(format!("fold {f} has no training units in arm {arm}")));
            }
            let a = DMatrix::from_row_iterator(train.len(), x.cols() + 1, train.iter().flat_map(|&i| design_row(i)));
            let b = DVector::from_iterator(train.len(), train.iter().map(|&i| y[i]));
            let beta = a
                .svd(true, true)
                .solve(&b, 1e-10)
                .map_err(|e| invalid(format!("least squares failed: {e}")))?;
            for i in (0..n).filter(|&i| folds[i] == f) {
                out[arm as usize][i] = design_row(i).zip(beta.iter()).map(|(u, v)| u * v).sum();
            }
        }
    }
    let [mu0, mu1] = out;
    Ok((mu1, mu0))
}

/// Raw components over the score population `pop`, with per-unit
/// propensities `qf`, `pf`.
fn strata_components(
    y: &[f64],
    d: &[u8],
    t: &[u8],
    qf: &[f64],
    pf: &[f64],
    pop: &[usize],
    assignment: &GroupPartition,
    pairing: &GroupPairing,
) -> Result<VarianceComponents> {
    let n = pop.len() as f64;
    let score: Vec<f64> = pop
        .iter()
        .map(|&i| t[i] as f64 * (d[i] as f64 - pf[i]) * obs(y, t, i) / (qf[i] * pf[i] * (1.0 - pf[i])))
        .collect();
    let mean = score.iter().sum::<f64>() / n;
    let sample_var = score.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;

    for (g, members) in assignment.groups.iter().enumerate() {
        if let Some(&i) = members.iter().find(|&&i| i >= t.len() || t[i] == 0) {
            return Err(invalid(format!("assignment group {g} contains unit {i}, which was not sampled")));
        }
    }
    let (mut v1, mut v0, mut v01) = (0.0, 0.0, 0.0);
    for union in &pairing.unions {
        let members = union.iter().flat_map(|&g| assignment.groups[g].iter().copied());
        let (mut a, mut c) = (0usize, 0usize);
        let (mut s1, mut ss1, mut s0, mut ss0) = (0.0, 0.0, 0.0, 0.0);
        for i in members {
            if d[i] == 1 {
                let w = (1.0 - pf[i] * qf[i]) / (pf[i] * qf[i]).powi(2);
                a += 1;
                s1 += y[i] * w.sqrt();
                ss1 += y[i] * y[i] * w;
            } else {
                let w = (1.0 - qf[i] * (1.0 - pf[i])) / (qf[i] * (1.0 - pf[i])).powi(2);
                c += 1;
                s0 += y[i] * w.sqrt();
                ss0 += y[i] * y[i] * w;
            }
        }
        if a < 2 || c < 2 {
            return Err(Error::DegenerateUnion {
                group: union[0],
                treated: a,
                control: c,
            });
        }
        v1 += (s1 * s1 - ss1) / (a - 1) as f64;
        v0 += (s0 * s0 - ss0) / (c - 1) as f64;
    }
    for members in &assignment.groups {
        let k = members.len();
        let a = members.iter().filter(|&&i| d[i] == 1).count();
        if a == 0 || a == k {
            continue;
        }
        let (mut s1, mut s0) = (0.0, 0.0);
        for &i in members {
            if d[i] == 1 {
                s1 += y[i] / qf[i].sqrt();
            } else {
                s0 += y[i] / qf[i].sqrt();
            }
        }
        v01 += k as f64 / (a * (k - a)) as f64 * s1 * s0;
    }
    Ok(VarianceComponents {
        sample_var,
        v1: v1 / n,
        v0: v0 / n,
        v01: v01 / n,
    })
}

fn finish(components: VarianceComponents) -> VarianceEstimate {
    let raw = components.sample_var - components.v1 - components.v0 - 2.0 * components.v01;
    let floored = raw <= 0.0;
    VarianceEstimate {
        components,
        raw,
        v_hat: if floored { 0.01 * components.sample_var } else { raw },
        floored,
    }
}

/// The collapsed-strata estimate of the limiting variance of
/// `sqrt(n) (theta_hat - ATE)`. `pairing` pairs the groups of `assignment`.
pub fn collapsed_strata_variance(
    y: &[f64],
    d: &[u8],
    t: &[u8],
    q: &PropensityMap,
    p: &PropensityMap,
    assignment: &GroupPartition,
    pairing: &GroupPairing,
) -> Result<VarianceEstimate> {
    check_indicators(y, d, t)?;
    let (qf, pf) = weights(t, q, p)?;
    let pop: Vec<usize> = (0..t.len()).collect();
    Ok(finish(strata_components(y, d, t, &qf, &pf, &pop, assignment, pairing)?))
}

/// Variance for designs that sample by complete randomization: the
/// collapsed-strata estimate among sampled units (`q = 1`) scaled by `n / N`.
pub fn complete_sampling_variance(
    y: &[f64],
    d: &[u8],
    t: &[u8],
    p: &PropensityMap,
    assignment: &GroupPartition,
    pairing: &GroupPairing,
) -> Result<VarianceEstimate> {
    check_indicators(y, d, t)?;
    let (_, pf) = weights(t, &PropensityMap::constant(t.len(), crate::Propensity::ONE), p)?;
    let pop: Vec<usize> = (0..t.len()).filter(|&i| t[i] == 1).collect();
    if pop.is_empty() {
        return Err(invalid("no sampled units"));
    }
    let scale = t.len() as f64 / pop.len() as f64;
    let ones = vec![1.0; t.len()];
    let c = strata_components(y, d, t, &ones, &pf, &pop, assignment, pairing)?;
    Ok(finish(VarianceComponents {
        sample_var: c.sample_var * scale,
        v1: c.v1 * scale,
        v0: c.v0 * scale,
        v01: c.v01 * scale,
    }))
}

/// `n (s1^2 / N1 + s0^2 / N0)` with unbiased arm variances.
pub fn neyman_variance(y: &[f64], d: &[u8], t: &[u8]) -> Result<f64> {
    check_indicators(y, d, t)?;
    let mut arms: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for i in (0..t.len()).filter(|&i| t[i] == 1) {
        arms[d[i] as usize].push(y[i]);
    }
    let mut v = 0.0;
    for (a, ys) in arms.iter().enumerate() {
        if ys.len() < 2 {
            return Err(invalid(format!("arm {a} has {} sampled units, need 2", ys.len())));
        }
        v += sample_variance(ys) / ys.len() as f64;
    }
    Ok(t.len() as f64 * v)
}

fn sample_variance(ys: &[f64]) -> f64 {
    let m = ys.iter().sum::<f64>() / ys.len() as f64;
    ys.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (ys.len() - 1) as f64
}

/// `theta_hat -/+ z_{1 - alpha/2} sqrt(v_hat / n)`.
pub fn confidence_interval(theta_hat: f64, v_hat: f64, n_eligible: usize, alpha: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if !(v_hat > 0.0 && v_hat.is_finite()) {
        return Err(invalid(format!("variance must be positive and finite, got {v_hat}")));
    }
    if n_eligible == 0 || !theta_hat.is_finite() {
        return Err(invalid("interval needs a finite estimate and n > 0"));
    }
    let h = normal_quantile(1.0 - alpha / 2.0) * (v_hat / n_eligible as f64).sqrt();
    Ok((theta_hat - h, theta_hat + h))
}

/// Conservative variance for the sample average treatment effect. Residual
/// variances come from within-union arm variances; the variance of the
/// treatment effect is bounded below by `(sigma1 - sigma0)^2`.
pub fn sate_variance_bound(
    y: &[f64],
    d: &[u8],
    t: &[u8],
    q: &PropensityMap,
    p: &PropensityMap,
    assignment: &GroupPartition,
    pairing: &GroupPairing,
) -> Result<SateBound> {
    check_indicators(y, d, t)?;
    let (qf, pf) = weights(t, q, p)?;
    let n = t.len();
    let mut zeta = vec![[0.0f64; 2]; n];
    let mut covered = vec![false; n];
    for union in &pairing.unions {
        let members: Vec<usize> = union
            .iter()
            .flat_map(|&g| assignment.groups[g].iter().copied())
            .collect();
        if let Some(&i) = members.iter().find(|&&i| i >= n || t[i] == 0) {
            return Err(invalid(format!("unit {i} in a union was not sampled")));
        }
        let arm = |a: u8| -> Vec<f64> { members.iter().filter(|&&i| d[i] == a).map(|&i| y[i]).collect() };
        let (y1, y0) = (arm(1), arm(0));
        if y1.len() < 2 || y0.len() < 2 {
            return Err(Error::DegenerateUnion {
                group: union[0],
                treated: y1.len(),
                control: y0.len(),
            });
        }
        let z = [sample_variance(&y0), sample_variance(&y1)];
        for &i in &members {
            zeta[i] = z;
            covered[i] = true;
        }
    }
    if let Some(i) = (0..n).find(|&i| t[i] == 1 && !covered[i]) {
        return Err(invalid(format!("sampled unit {i} is in no union")));
    }
    let (mut r, mut s1, mut s0) = (0.0, 0.0, 0.0);
    for i in (0..n).filter(|&i| t[i] == 1) {
        let [z0, z1] = zeta[i];
        r += (z1 / pf[i] + z0 / (1.0 - pf[i])) / (qf[i] * qf[i]);
        s1 += z1 / qf[i];
        s0 += z0 / qf[i];
    }
    let nf = n as f64;
    let (residual, s1, s0) = (r / nf, (s1 / nf).sqrt(), (s0 / nf).sqrt());
    let bound_term = (s1 - s0).powi(2).max(0.0);
    Ok(SateBound {
        residual,
        bound_term,
        v: residual - bound_term,
    })
}

/// Slope of `f ~ 1 + D` among sampled units with an HC1 standard error
/// and a two-sided normal p-value.
pub fn balance_diagnostic(f: &[f64], d: &[u8], t: &[u8]) -> Result<Balance> {
    let beta = difference_of_means(f, d, t)?;
    let mut arms: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for i in (0..t.len()).filter(|&i| t[i] == 1) {
        arms[d[i] as usize].push(f[i]);
    }
    let m = arms.iter().map(Vec::len).sum::<usize>();
    if m <= 2 {
        return Err(invalid("balance regression needs more than 2 sampled units"));
    }
    let mut hc0 = 0.0;
    for ys in &arms {
        let mean = ys.iter().sum::<f64>() / ys.len() as f64;
        hc0 += ys.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (ys.len() as f64).powi(2);
    }
    let se = (hc0 * m as f64 / (m - 2) as f64).sqrt();
    let p_value = if se > 0.0 {
        two_sided_p(beta / se)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    };
    Ok(Balance { beta, se, p_value })
}

/// Double-IPW estimate, variance and interval for a realized design.
/// `psi2` supplies the centroids used to pair assignment groups.
pub fn estimate_design(
    design: &DesignResult,
    y: &[f64],
    psi2: &Matrix,
    alpha: f64,
    method: VarianceMethod,
) -> Result<EstimateReport> {
    let (t, d) = (&design.t, &design.d);
    let theta_hat = double_ipw(y, d, t, &design.q, &design.p)?;
    let est = match method {
        VarianceMethod::CollapsedStrata | VarianceMethod::CompleteSampling => {
            let pairing = pair_groups(&design.assignment, psi2)?;
            if method == VarianceMethod::CollapsedStrata {
                collapsed_strata_variance(y, d, t, &design.q, &design.p, &design.assignment, &pairing)?
            } else {
                complete_sampling_variance(y, d, t, &design.p, &design.assignment, &pairing)?
            }
        }
        VarianceMethod::Complete => {
            let v = neyman_variance(y, d, t)?;
            VarianceEstimate {
                components: VarianceComponents {
                    sample_var: v,
                    ..Default::default()
                },
                raw: v,
                v_hat: v,
                floored: false,
            }
        }
    };
    let n_sampled = design.n_sampled();
    let in_remainder = |part: &GroupPartition| -> usize {
        part.groups
            .iter()
            .zip(&part.remainder)
            .filter(|t| *t.1)
            .map(|t| t.0.len())
            .sum()
    };
    let sampled_rem = design
        .sampling
        .groups
        .iter()
        .zip(&design.sampling.remainder)
        .filter(|g| *g.1)
        .flat_map(|g| g.0.iter())
        .filter(|&&i| t[i] == 1)
        .count();
    let remainder_heavy = (in_remainder(&design.assignment).max(sampled_rem)) as f64 > 0.1 * n_sampled as f64;
    let ci = confidence_interval(theta_hat, est.v_hat, t.len(), alpha)?;
    Ok(EstimateReport {
        theta_hat,
        v_hat: est.v_hat,
        components: est.components,
        ci,
        alpha,
        n_eligible: t.len(),
        n_sampled,
        method,
        flags: Flags {
            variance_floored: est.floored,
            remainder_heavy,
            subvector_warning: design.warnings.iter().any(|w| w.contains("subvector")),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propensity::Propensity;
    use crate::randomize::two_stage;
    use crate::units::UnitTable;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn pr(a: u32, b: u32) -> Propensity {
        Propensity::new(a, b).unwrap()
    }

    fn design(n: usize, q: Propensity, p: Propensity, seed: u64) -> (DesignResult, Matrix, Vec<f64>) {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Vec<f64>> = (0..n).map(|_| vec![r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)]).collect();
        let m = Matrix::from_rows(&pts).unwrap();
        let table = UnitTable::from_psi(m.clone()).unwrap();
        let des = two_stage(
            &table,
            &PropensityMap::constant(n, q),
            &PropensityMap::constant(n, p),
            false,
            &RandomSource::new(seed),
        )
        .unwrap();
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let base = pts[i][0] + 2.0 * pts[i][1] + r.random_range(-0.5..0.5);
                if des.t[i] == 0 {
                    f64::NAN
                } else {
                    base + des.d[i] as f64
                }
            })
            .collect();
        (des, m, y)
    }

    /// Direct double sums over ordered pairs.
    fn brute_components(
        y: &[f64],
        d: &[u8],
        t: &[u8],
        q: &[f64],
        p: &[f64],
        part: &GroupPartition,
        mu: &GroupPairing,
    ) -> VarianceComponents {
        let n = t.len() as f64;
        let score: Vec<f64> = (0..t.len())
            .map(|i| if t[i] == 1 { (d[i] as f64 - p[i]) * y[i] / (q[i] * p[i] * (1.0 - p[i])) } else { 0.0 })
            .collect();
        let m = score.iter().sum::<f64>() / n;
        let sample_var = score.iter().map(|s| (s - m) * (s - m)).sum::<f64>() / n;
        let (mut v1, mut v0, mut v01) = (0.0, 0.0, 0.0);
        for u in &mu.unions {
            let mem: Vec<usize> = u.iter().flat_map(|&g| part.groups[g].clone()).collect();
            let a = mem.iter().filter(|&&i| d[i] == 1).count() as f64;
            let k = mem.len() as f64;
            let w1 = |i: usize| (1.0 - p[i] * q[i]) / (p[i] * q[i]).powi(2);
            let w0 = |i: usize| (1.0 - q[i] * (1.0 - p[i])) / (q[i] * (1.0 - p[i])).powi(2);
            for &i in &mem {
                for &j in &mem {
                    if i == j {
                        continue;
                    }
                    let dd = (d[i] * d[j]) as f64;
                    let cc = ((1 - d[i]) * (1 - d[j])) as f64;
                    v1 += y[i] * y[j] * dd * (w1(i) * w1(j)).sqrt() / (a - 1.0);
                    v0 += y[i] * y[j] * cc * (w0(i) * w0(j)).sqrt() / (k - a - 1.0);
                }
            }
        }
        for g in &part.groups {
            let k = g.len() as f64;
            let a = g.iter().filter(|&&i| d[i] == 1).count() as f64;
            if a == 0.0 || a == k {
                continue;
            }
            for &i in g {
                for &j in g {
                    let x = (d[i] * (1 - d[j])) as f64;
                    v01 += k / (a * (k - a)) * y[i] * y[j] * x / (q[i] * q[j]).sqrt();
                }
            }
        }
        VarianceComponents {
            sample_var,
            v1: v1 / n,
            v0: v0 / n,
            v01: v01 / n,
        }
    }

    #[test]
    fn difference_of_means_examples() {
        let t = [1, 1, 1, 1];
        assert_eq!(difference_of_means(&[3.0, 1.0, 5.0, 2.0], &[1, 0, 1, 0], &t).unwrap(), 2.5);
        assert_eq!(difference_of_means(&[1.0, 0.0, 1.0, 0.0], &[1, 0, 1, 0], &t).unwrap(), 1.0);
        assert_eq!(difference_of_means(&[7.0; 4], &[1, 0, 0, 1], &t).unwrap(), 0.0);
        assert!(difference_of_means(&[1.0; 4], &[1, 1, 1, 1], &t).is_err());
    }

    #[test]
    fn double_ipw_examples() {
        let q = PropensityMap::constant(4, Propensity::ONE);
        let p = PropensityMap::constant(4, pr(1, 2));
        let v = double_ipw(&[2.0, 2.0, 4.0, 4.0], &[1, 0, 1, 0], &[1; 4], &q, &p).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(double_ipw(&[0.0; 4], &[1, 0, 1, 0], &[1; 4], &q, &p).unwrap(), 0.0);
        let bad = PropensityMap::constant(4, Propensity::ONE);
        assert!(double_ipw(&[0.0; 4], &[1, 0, 1, 0], &[1; 4], &q, &bad).is_err());
    }

    #[test]
    fn double_ipw_equals_difference_of_means_with_exact_counts() {
        for seed in 0..30 {
            let (des, _, y) = design(120, pr(1, 2), pr(1, 3), seed);
            let a = double_ipw(&y, &des.d, &des.t, &des.q, &des.p).unwrap();
            let b = difference_of_means(&y, &des.d, &des.t).unwrap();
            assert!((a - b).abs() < 1e-12, "{a} {b}");
        }
    }

    #[test]
    fn aipw2_with_zero_predictions_is_double_ipw() {
        let (des, _, y) = design(60, pr(2, 3), pr(1, 2), 3);
        let z = vec![0.0; 60];
        let a = aipw2(&y, &des.d, &des.t, &des.q, &des.p, &z, &z).unwrap();
        let b = double_ipw(&y, &des.d, &des.t, &des.q, &des.p).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn aipw2_with_perfect_predictions_recovers_the_effect() {
        let (des, m, _) = design(60, pr(1, 2), pr(1, 2), 4);
        let mu0: Vec<f64> = (0..60).map(|i| m.get(i, 0)).collect();
        let mu1: Vec<f64> = mu0.iter().map(|v| v + 1.5).collect();
        let y: Vec<f64> = (0..60).map(|i| if des.d[i] == 1 { mu1[i] } else { mu0[i] }).collect();
        let a = aipw2(&y, &des.d, &des.t, &des.q, &des.p, &mu1, &mu0).unwrap();
        assert!((a - 1.5).abs() < 1e-12);
    }

    #[test]
    fn cross_fit_recovers_linear_means() {
        let (des, m, _) = design(200, pr(1, 2), pr(1, 2), 5);
        let y: Vec<f64> = (0..200).map(|i| 1.0 + 2.0 * m.get(i, 0) - m.get(i, 1) + 3.0 * des.d[i] as f64).collect();
        let folds = random_halves(200, &RandomSource::new(1));
        assert_eq!(folds.iter().filter(|&&f| f == 1).count(), 100);
        let (mu1, mu0) = cross_fit_linear(&m, &y, &des.d, &des.t, &folds).unwrap();
        for i in 0..200 {
            assert!((mu1[i] - mu0[i] - 3.0).abs() < 1e-8);
        }
        let a = aipw2(&y, &des.d, &des.t, &des.q, &des.p, &mu1, &mu0).unwrap();
        assert!((a - 3.0).abs() < 1e-8);
    }

    #[test]
    fn components_match_double_sums() {
        for (seed, q, p) in [(1, pr(1, 2), pr(1, 2)), (2, pr(3, 4), pr(1, 3)), (3, pr(2, 3), pr(2, 5))] {
            let (des, m, y) = design(150, q, p, seed);
            let mu = pair_groups(&des.assignment, &m).unwrap();
            let est = collapsed_strata_variance(&y, &des.d, &des.t, &des.q, &des.p, &des.assignment, &mu).unwrap();
            let b = brute_components(&y, &des.d, &des.t, &des.q.as_f64(), &des.p.as_f64(), &des.assignment, &mu);
            let c = est.components;
            for (u, v) in [(c.sample_var, b.sample_var), (c.v1, b.v1), (c.v0, b.v0), (c.v01, b.v01)] {
                assert!((u - v).abs() < 1e-9 * (1.0 + v.abs()), "{u} {v}");
            }
            assert!(est.v_hat > 0.0);
        }
    }

    #[test]
    fn zero_outcomes_are_floored() {
        let (des, m, _) = design(40, Propensity::ONE, pr(1, 2), 6);
        let mu = pair_groups(&des.assignment, &m).unwrap();
        let est = collapsed_strata_variance(&[0.0; 40], &des.d, &des.t, &des.q, &des.p, &des.assignment, &mu).unwrap();
        assert_eq!(est.components, VarianceComponents::default());
        assert_eq!(est.v_hat, 0.0);
        assert!(est.floored);
    }

    #[test]
    fn noiseless_outcomes_have_small_variance() {
        let n = 200;
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let m = Matrix::column(&(0..n).map(|_| r.random_range(0.0..1.0)).collect::<Vec<_>>());
        let table = UnitTable::from_psi(m.clone()).unwrap();
        let des = two_stage(
            &table,
            &PropensityMap::constant(n, Propensity::ONE),
            &PropensityMap::constant(n, pr(1, 2)),
            false,
            &RandomSource::new(2),
        )
        .unwrap();
        let y: Vec<f64> = (0..n).map(|i| if des.d[i] == 1 { 3.0 } else { 1.0 }).collect();
        let mu = pair_groups(&des.assignment, &m).unwrap();
        let est = collapsed_strata_variance(&y, &des.d, &des.t, &des.q, &des.p, &des.assignment, &mu).unwrap();
        assert!(est.v_hat < 0.05 * est.components.sample_var, "{:?}", est);
    }

    #[test]
    fn degenerate_union_is_reported() {
        let mut part = GroupPartition::default();
        part.push(vec![0, 1], pr(1, 2), false, 0);
        part.push(vec![2, 3], pr(1, 2), false, 0);
        let mu = GroupPairing {
            mu: vec![Some(1), Some(0)],
            unions: vec![vec![0, 1]],
        };
        let q = PropensityMap::constant(4, Propensity::ONE);
        let p = PropensityMap::constant(4, pr(1, 2));
        let e = collapsed_strata_variance(&[1.0; 4], &[1, 1, 0, 1], &[1; 4], &q, &p, &part, &mu).unwrap_err();
        assert!(matches!(e, Error::DegenerateUnion { group: 0, treated: 3, control: 1 }));
    }

    #[test]
    fn interval_examples() {
        let (lo, hi) = confidence_interval(0.0, 1.0, 100, 0.05).unwrap();
        assert!((hi - 0.195_996).abs() < 1e-6 && (lo + hi).abs() < 1e-15);
        let (_, hi) = confidence_interval(2.0, 4.0, 16, 0.3173).unwrap();
        assert!((hi - 2.5).abs() < 1e-3);
        assert!(confidence_interval(0.0, 1.0, 10, 1.0).is_err());
        assert!(confidence_interval(0.0, 1.0, 10, 0.0).is_err());
        assert!(confidence_interval(0.0, 0.0, 10, 0.05).is_err());
    }

    #[test]
    fn sate_bound_single_union_is_classical() {
        let mut part = GroupPartition::default();
        part.push(vec![0, 1, 2, 3], pr(1, 2), false, 0);
        part.push(vec![4, 5, 6, 7], pr(1, 2), false, 0);
        let mu = GroupPairing {
            mu: vec![Some(1), Some(0)],
            unions: vec![vec![0, 1]],
        };
        let y = [1.0, 2.0, 4.0, 0.0, 3.0, -1.0, 2.0, 5.0];
        let d = [1, 0, 1, 0, 1, 0, 1, 0];
        let q = PropensityMap::constant(8, Propensity::ONE);
        let p = PropensityMap::constant(8, pr(1, 2));
        let b = sate_variance_bound(&y, &d, &[1; 8], &q, &p, &part, &mu).unwrap();
        let s1 = sample_variance(&[1.0, 4.0, 3.0, 2.0]);
        let s0 = sample_variance(&[2.0, 0.0, -1.0, 5.0]);
        assert!((b.residual - (s1 / 0.5 + s0 / 0.5)).abs() < 1e-12);
        assert!((b.bound_term - (s1.sqrt() - s0.sqrt()).powi(2)).abs() < 1e-12);
        assert!((b.v - b.residual + b.bound_term).abs() < 1e-15);

        let y2 = [1.0, 0.0, 3.0, 2.0, 2.0, 1.0, 4.0, 3.0];
        let b = sate_variance_bound(&y2, &d, &[1; 8], &q, &p, &part, &mu).unwrap();
        assert!(b.bound_term < 1e-24);
        assert_eq!(b.v, b.residual);
    }

    #[test]
    fn balance_examples() {
        let t = [1u8; 6];
        let d = [1, 0, 1, 0, 1, 0];
        let b = balance_diagnostic(&[2.0; 6], &d, &t).unwrap();
        assert_eq!((b.beta, b.p_value), (0.0, 1.0));
        let f: Vec<f64> = d.iter().map(|&x| x as f64).collect();
        assert_eq!(balance_diagnostic(&f, &d, &t).unwrap().beta, 1.0);
    }

    #[test]
    fn balance_se_matches_sandwich() {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let n = 50;
        let d: Vec<u8> = (0..n).map(|i| (i % 3 == 0) as u8).collect();
        let f: Vec<f64> = (0..n).map(|i| r.random_range(0.0..1.0) + d[i] as f64 * r.random_range(0.0..2.0)).collect();
        let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { d[i] as f64 });
        let yv = DVector::from_column_slice(&f);
        let xtx_inv = (x.transpose() * &x).try_inverse().unwrap();
        let beta = &xtx_inv * x.transpose() * &yv;
        let e = &yv - &x * &beta;
        let meat = x.transpose() * DMatrix::from_diagonal(&e.map(|v| v * v)) * &x;
        let cov = &xtx_inv * meat * &xtx_inv * (n as f64 / (n - 2) as f64);
        let b = balance_diagnostic(&f, &d, &vec![1; n]).unwrap();
        assert!((b.beta - beta[1]).abs() < 1e-12);
        assert!((b.se - cov[(1, 1)].sqrt()).abs() < 1e-12);
    }

    #[test]
    fn report_uses_eligible_count() {
        let (des, m, y) = design(200, pr(1, 2), pr(1, 2), 11);
        let r = estimate_design(&des, &y, &m, 0.05, VarianceMethod::CollapsedStrata).unwrap();
        assert_eq!((r.n_eligible, r.n_sampled), (200, 100));
        let h = (r.ci.1 - r.ci.0) / 2.0;
        assert!((h - 1.959_963_984_540_054 * (r.v_hat / 200.0).sqrt()).abs() < 1e-12);
        assert!(!r.flags.remainder_heavy && !r.flags.subvector_warning);
        let c = estimate_design(&des, &y, &m, 0.05, VarianceMethod::Complete).unwrap();
        assert!((c.v_hat - neyman_variance(&y, &des.d, &des.t).unwrap()).abs() < 1e-12);
        let s = estimate_design(&des, &y, &m, 0.05, VarianceMethod::CompleteSampling).unwrap();
        assert!(s.v_hat > 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn scaling_and_shifting(seed in 0u64..1000, s in 0.1f64..10.0, c in -5.0f64..5.0) {
            let (des, m, y) = design(80, pr(1, 2), pr(1, 2), seed);
            let mu = pair_groups(&des.assignment, &m).unwrap();
            let base = collapsed_strata_variance(&y, &des.d, &des.t, &des.q, &des.p, &des.assignment, &mu).unwrap();
            let ys: Vec<f64> = y.iter().map(|v| v * s).collect();
            let scaled = collapsed_strata_variance(&ys, &des.d, &des.t, &des.q, &des.p, &des.assignment, &mu).unwrap();
            prop_assert!((scaled.v_hat - s * s * base.v_hat).abs() < 1e-8 * (1.0 + scaled.v_hat));
            let yc: Vec<f64> = y.iter().map(|v| v + c).collect();
            let a = difference_of_means(&y, &des.d, &des.t).unwrap();
            let b = difference_of_means(&yc, &des.d, &des.t).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
