//! Simulation models, the design registry and the Monte Carlo harness.

mod dgp;

pub use dgp::{generate_dgp, CostRule, DgpSpec, Hetero, Outcome, Residual};

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::design::DesignResult;
use crate::error::{invalid, Error, Result};
use crate::estimate::{estimate_design, VarianceMethod};
use crate::matching::pair_groups;
use crate::matrix::{sq_dist, Matrix};
use crate::optimal::{discretize_propensity, feasibility_rounding, BudgetSpec};
use crate::pilot::{estimate_variance_functions, feasible_optimal_design, Bandwidth, PilotData};
use crate::propensity::{Propensity, PropensityMap};
use crate::randomize::{complete_two_stage, local_randomize, two_stage};
use crate::rng::RandomSource;
use crate::units::UnitTable;

/// The compared designs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DesignId {
    Cr,
    CrLoc,
    Loc,
    Hom,
    Opt,
    /// Pilot-estimated optimal design with a pilot of this size.
    Pilot(usize),
}

impl DesignId {
    pub const PILOT_S: DesignId = DesignId::Pilot(100);
    pub const PILOT_L: DesignId = DesignId::Pilot(400);

    /// Column label as in the comparison table.
    pub fn label(&self) -> String {
        match self {
            DesignId::Cr => "CR".into(),
            DesignId::CrLoc => "CR_Loc".into(),
            DesignId::Loc => "Loc".into(),
            DesignId::Hom => "Hom".into(),
            DesignId::Opt => "Opt".into(),
            DesignId::Pilot(100) => "PilotS".into(),
            DesignId::Pilot(400) => "PilotL".into(),
            DesignId::Pilot(n) => format!("Pilot{n}"),
        }
    }
}

impl fmt::Display for DesignId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DesignId::Cr => f.write_str("cr"),
            DesignId::CrLoc => f.write_str("crloc"),
            DesignId::Loc => f.write_str("loc"),
            DesignId::Hom => f.write_str("hom"),
            DesignId::Opt => f.write_str("opt"),
            DesignId::Pilot(n) => write!(f, "pilot:{n}"),
        }
    }
}

impl FromStr for DesignId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        Ok(match s.as_str() {
            "cr" => DesignId::Cr,
            "crloc" | "cr_loc" | "cr,loc" => DesignId::CrLoc,
            "loc" => DesignId::Loc,
            "hom" => DesignId::Hom,
            "opt" => DesignId::Opt,
            "pilots" => DesignId::PILOT_S,
            "pilotl" => DesignId::PILOT_L,
            _ => match s.strip_prefix("pilot:").map(str::parse::<usize>) {
                Some(Ok(n)) if n >= 8 => DesignId::Pilot(n),
                _ => return Err(invalid(format!("unknown design `{s}`"))),
            },
        })
    }
}

/// Harness settings.
#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub reps: usize,
    pub alpha: f64,
    pub k_max: u32,
    pub l_max: usize,
    /// Assignment matched within sampling strata when `q` varies.
    pub subordinate: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            reps: 1000,
            alpha: 0.05,
            k_max: 8,
            l_max: 3,
            subordinate: true,
        }
    }
}

/// Budget-exhausting constant sampling propensity `a/k` with the smallest
/// `k` such that `(a/k) E[c]` lies within 5% of the budget.
pub fn cr_sampling_propensity(spec: &DgpSpec) -> Result<Propensity> {
    let mc = spec.mean_cost();
    if spec.budget >= mc {
        return Ok(Propensity::ONE);
    }
    let target = spec.budget / mc;
    for k in 1..=1000u32 {
        let a = ((target * k as f64).round() as u32).clamp(1, k);
        let q = a as f64 / k as f64;
        if (q * mc - spec.budget).abs() <= 0.05 * spec.budget {
            return Propensity::new(a, k);
        }
    }
    Err(Error::Budget(format!("no a/k with k <= 1000 spends within 5% of {}", spec.budget)))
}

/// The design for one repetition and the variance estimator it calls for.
pub fn execute_design(
    design: DesignId,
    spec: &DgpSpec,
    table: &UnitTable,
    cfg: &SimConfig,
    rng: &RandomSource,
) -> Result<(DesignResult, VarianceMethod)> {
    let n = table.n();
    let costs = table.cost.clone().ok_or_else(|| invalid("simulation table has no costs"))?;
    let q_cr = cr_sampling_propensity(spec)?;
    let p0 = PropensityMap::constant(n, spec.p);
    let varying = |q: PropensityMap, p: PropensityMap| -> Result<(DesignResult, VarianceMethod)> {
        Ok((two_stage(table, &q, &p, cfg.subordinate, rng)?, VarianceMethod::CollapsedStrata))
    };
    match design {
        DesignId::Cr => Ok((complete_two_stage(table, q_cr, spec.p, false, rng)?, VarianceMethod::Complete)),
        DesignId::CrLoc => Ok((
            complete_two_stage(table, q_cr, spec.p, true, rng)?,
            VarianceMethod::CompleteSampling,
        )),
        DesignId::Loc => varying(PropensityMap::constant(n, q_cr), p0),
        DesignId::Hom => {
            let r: Vec<f64> = costs.iter().map(|c| c.powf(-0.5)).collect();
            let norm = costs.iter().map(|c| c.sqrt()).sum::<f64>() / n as f64;
            let q: Vec<f64> = r.iter().map(|v| spec.budget * v / norm).collect();
            let rounded = feasibility_rounding(&q, &costs, spec.budget)?;
            varying(discretize_propensity(&rounded.q, cfg.k_max, cfg.l_max)?, p0)
        }
        DesignId::Opt => {
            let profile = spec.oracle_profile(&table.psi1)?;
            let budget = BudgetSpec::new(spec.budget, costs)?;
            let f = feasible_optimal_design(&profile, &budget, cfg.k_max, cfg.l_max, true)?;
            varying(f.q, f.p)
        }
        DesignId::Pilot(np) => {
            let pilot = pilot_experiment(spec, np, &rng.child("pilot", 0))?;
            let profile = estimate_variance_functions(&pilot, &table.psi1, Bandwidth::CrossValidated)?;
            let budget = BudgetSpec::new(spec.budget, costs)?;
            let f = feasible_optimal_design(&profile, &budget, cfg.k_max, cfg.l_max, true)?;
            varying(f.q, f.p)
        }
    }
}

/// A pilot of size `np` from the same model: everyone sampled, treatment
/// by matched pairs with `p = 1/2`.
pub fn pilot_experiment(spec: &DgpSpec, np: usize, rng: &RandomSource) -> Result<PilotData> {
    let table = generate_dgp(&spec.with_n(np), rng)?;
    let half = Propensity::new(1, 2)?;
    let r = local_randomize(&table.psi2, &PropensityMap::constant(np, half), rng)?;
    let (y0, y1) = (table.y0.as_ref().unwrap(), table.y1.as_ref().unwrap());
    let y: Vec<f64> = (0..np).map(|i| if r.x[i] == 1 { y1[i] } else { y0[i] }).collect();
    PilotData::new(table.psi1, y, vec![1; np], r.x, vec![1.0; np], vec![0.5; np])
}

/// `y = T (D y1 + (1 - D) y0)`, NaN for unsampled units.
pub fn reveal(table: &UnitTable, t: &[u8], d: &[u8]) -> Result<Vec<f64>> {
    let (y0, y1) = match (&table.y0, &table.y1) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(invalid("table lacks potential outcomes")),
    };
    Ok((0..table.n())
        .map(|i| match (t[i], d[i]) {
            (0, _) => f64::NAN,
            (_, 1) => y1[i],
            _ => y0[i],
        })
        .collect())
}

/// Outcome of one repetition under one design.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RepResult {
    pub theta_hat: f64,
    pub v_hat: f64,
    pub ci_length: f64,
    pub covered: bool,
    pub n_sampled: usize,
    pub floored: bool,
}

/// Aggregate metrics of one design.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DesignMetrics {
    pub design: String,
    pub sd: f64,
    pub sd_ratio: f64,
    pub mean_ci_length: f64,
    pub pct_delta_ci: f64,
    pub coverage: f64,
    pub mean_n_sampled: f64,
    pub bias: f64,
    /// `n Var(theta_hat)` across repetitions.
    pub n_var: f64,
    pub mean_v_hat: f64,
    pub floored_share: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonTable {
    pub model_id: u8,
    pub n: usize,
    pub dim: usize,
    pub reps: usize,
    pub ate: f64,
    pub rows: Vec<DesignMetrics>,
}

impl ComparisonTable {
    pub fn get(&self, design: DesignId) -> Option<&DesignMetrics> {
        let label = design.label();
        self.rows.iter().find(|r| r.design == label)
    }

    /// `metric,design,value` rows grouped as SD ratio, CI change and coverage.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["metric", "design", "value"])?;
        type Metric = fn(&DesignMetrics) -> f64;
        let metrics: [(&str, Metric); 6] = [
            ("sd_ratio", |r| r.sd_ratio),
            ("pct_delta_ci", |r| r.pct_delta_ci),
            ("coverage", |r| r.coverage),
            ("sd", |r| r.sd),
            ("mean_ci_length", |r| r.mean_ci_length),
            ("mean_n_sampled", |r| r.mean_n_sampled),
        ];
        for (name, f) in metrics {
            for r in &self.rows {
                out.write_record([name, r.design.as_str(), &format!("{:.6}", f(r))])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Runs one repetition of one design on a fresh draw of the model.
pub fn run_rep(spec: &DgpSpec, design: DesignId, cfg: &SimConfig, ate: f64, rng: &RandomSource) -> Result<RepResult> {
    let table = generate_dgp(spec, &rng.child("dgp", 0))?;
    let (des, method) = execute_design(design, spec, &table, cfg, &rng.child(&design.to_string(), 0))?;
    let y = reveal(&table, &des.t, &des.d)?;
    let r = estimate_design(&des, &y, &table.psi2, cfg.alpha, method)?;
    Ok(RepResult {
        theta_hat: r.theta_hat,
        v_hat: r.v_hat,
        ci_length: r.ci.1 - r.ci.0,
        covered: r.ci.0 <= ate && ate <= r.ci.1,
        n_sampled: r.n_sampled,
        floored: r.flags.variance_floored,
    })
}

/// Simulates every design for `cfg.reps` repetitions. Repetition `r` of
/// every design sees the same draw of the model. Results do not depend on
/// the number of worker threads.
pub fn run_design_comparison(
    spec: &DgpSpec,
    designs: &[DesignId],
    cfg: &SimConfig,
    rng: &RandomSource,
) -> Result<ComparisonTable> {
    if cfg.reps < 2 {
        return Err(invalid("need at least 2 repetitions"));
    }
    if !designs.contains(&DesignId::Cr) {
        return Err(invalid("the CR baseline must be among the designs"));
    }
    let ate = spec.true_ate();
    let mut rows = Vec::new();
    let mut base = None;
    for &design in designs {
        let reps: Vec<RepResult> = (0..cfg.reps)
            .into_par_iter()
            .map(|r| run_rep(spec, design, cfg, ate, &rng.child("rep", r as u64)))
            .collect::<Result<_>>()?;
        let m = summarize(design, &reps, spec.n, ate);
        if design == DesignId::Cr {
            base = Some((m.sd, m.mean_ci_length));
        }
        rows.push(m);
    }
    let (sd0, len0) = base.unwrap();
    for r in rows.iter_mut() {
        r.sd_ratio = r.sd / sd0;
        r.pct_delta_ci = 100.0 * (r.mean_ci_length / len0 - 1.0);
    }
    Ok(ComparisonTable {
        model_id: spec.model_id,
        n: spec.n,
        dim: spec.dim,
        reps: cfg.reps,
        ate,
        rows,
    })
}

/// Pairwise (cascade) summation.
fn pairwise_sum(x: &[f64]) -> f64 {
    if x.len() <= 8 {
        return x.iter().sum();
    }
    let (a, b) = x.split_at(x.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

fn summarize(design: DesignId, reps: &[RepResult], n: usize, ate: f64) -> DesignMetrics {
    let m = reps.len() as f64;
    let th: Vec<f64> = reps.iter().map(|r| r.theta_hat).collect();
    let mean = pairwise_sum(&th) / m;
    let dev: Vec<f64> = th.iter().map(|v| (v - mean).powi(2)).collect();
    let var = pairwise_sum(&dev) / (m - 1.0);
    let avg = |f: &dyn Fn(&RepResult) -> f64| pairwise_sum(&reps.iter().map(f).collect::<Vec<_>>()) / m;
    DesignMetrics {
        design: design.label(),
        sd: var.sqrt(),
        sd_ratio: f64::NAN,
        mean_ci_length: avg(&|r| r.ci_length),
        pct_delta_ci: f64::NAN,
        coverage: avg(&|r| r.covered as u8 as f64),
        mean_n_sampled: avg(&|r| r.n_sampled as f64),
        bias: mean - ate,
        n_var: n as f64 * var,
        mean_v_hat: avg(&|r| r.v_hat),
        floored_share: avg(&|r| r.floored as u8 as f64),
    }
}

/// Fills both potential outcomes of an observed experiment by borrowing the
/// outcome of the nearest unit (on `psi1`, lowest index on ties) in the
/// missing arm. Unsampled units (`t = 0`) are dropped.
pub fn impute_panel(table: &UnitTable, d: &[u8], t: Option<&[u8]>) -> Result<UnitTable> {
    let n = table.n();
    let y = table.y_obs.as_ref().ok_or_else(|| invalid("table has no observed outcomes"))?;
    if d.len() != n || t.is_some_and(|t| t.len() != n) {
        return Err(invalid("treatment vector does not match the table"));
    }
    let keep: Vec<usize> = (0..n).filter(|&i| t.is_none_or(|t| t[i] == 1)).collect();
    if let Some(&i) = keep.iter().find(|&&i| !y[i].is_finite()) {
        return Err(invalid(format!("unit {i} has no observed outcome")));
    }
    let arms: [Vec<usize>; 2] = [
        keep.iter().copied().filter(|&i| d[i] == 0).collect(),
        keep.iter().copied().filter(|&i| d[i] == 1).collect(),
    ];
    if arms.iter().any(Vec::is_empty) {
        return Err(invalid("both arms need at least one unit"));
    }
    let nearest = |i: usize, pool: &[usize]| -> usize {
        let mut best = (f64::INFINITY, usize::MAX);
        for &j in pool {
            let dist = sq_dist(table.psi1.row(i), table.psi1.row(j));
            if dist < best.0 {
                best = (dist, j);
            }
        }
        best.1
    };
    let mut y0 = Vec::with_capacity(keep.len());
    let mut y1 = Vec::with_capacity(keep.len());
    for &i in &keep {
        let own = y[i];
        let other = y[nearest(i, &arms[1 - d[i] as usize])];
        if d[i] == 1 {
            y1.push(own);
            y0.push(other);
        } else {
            y0.push(own);
            y1.push(other);
        }
    }
    let sel = |m: &Matrix| m.select_rows(&keep);
    Ok(UnitTable {
        psi1: sel(&table.psi1),
        psi2: sel(&table.psi2),
        psi1_names: table.psi1_names.clone(),
        psi2_names: table.psi2_names.clone(),
        cost: table.cost.as_ref().map(|c| keep.iter().map(|&i| c[i]).collect()),
        y_obs: None,
        y0: Some(y0),
        y1: Some(y1),
        ids: table.ids.as_ref().map(|v| keep.iter().map(|&i| v[i].clone()).collect()),
    })
}

/// Coverage of the SATE by the conservative interval under the Loc design,
/// over `reps` repetitions.
pub fn sate_coverage(spec: &DgpSpec, cfg: &SimConfig, reps: usize, rng: &RandomSource) -> Result<f64> {
    let hits: Vec<bool> = (0..reps)
        .into_par_iter()
        .map(|r| -> Result<bool> {
            let g = rng.child("rep", r as u64);
            let table = generate_dgp(spec, &g.child("dgp", 0))?;
            let (des, _) = execute_design(DesignId::Loc, spec, &table, cfg, &g.child("loc", 0))?;
            let y = reveal(&table, &des.t, &des.d)?;
            let theta = crate::estimate::double_ipw(&y, &des.d, &des.t, &des.q, &des.p)?;
            let mu = pair_groups(&des.assignment, &table.psi2)?;
            let b = crate::estimate::sate_variance_bound(&y, &des.d, &des.t, &des.q, &des.p, &des.assignment, &mu)?;
            let (lo, hi) = crate::estimate::confidence_interval(theta, b.v.max(1e-12), spec.n, cfg.alpha)?;
            let (y0, y1) = (table.y0.as_ref().unwrap(), table.y1.as_ref().unwrap());
            let sate = (0..spec.n).map(|i| y1[i] - y0[i]).sum::<f64>() / spec.n as f64;
            Ok(lo <= sate && sate <= hi)
        })
        .collect::<Result<_>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / reps as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn cr_rule_matches_registry() {
        let want = [(1, (3, 4)), (2, (2, 5)), (3, (1, 2)), (4, (1, 2)), (5, (3, 4)), (6, (3, 4))];
        for (id, (a, k)) in want {
            let spec = DgpSpec::model(id, 10, 2).unwrap();
            assert_eq!(cr_sampling_propensity(&spec).unwrap(), Propensity::new(a, k).unwrap(), "model {id}");
        }
    }

    #[test]
    fn design_ids_round_trip() {
        for d in [DesignId::Cr, DesignId::CrLoc, DesignId::Loc, DesignId::Hom, DesignId::Opt, DesignId::Pilot(400)] {
            assert_eq!(d.to_string().parse::<DesignId>().unwrap(), d);
        }
        assert_eq!("pilotS".parse::<DesignId>().unwrap(), DesignId::Pilot(100));
        assert!("pilot:x".parse::<DesignId>().is_err());
        assert!("rr".parse::<DesignId>().is_err());
    }

    #[test]
    fn every_design_runs_on_every_model() {
        let cfg = SimConfig::default();
        let designs = [DesignId::Cr, DesignId::CrLoc, DesignId::Loc, DesignId::Hom, DesignId::Opt, DesignId::Pilot(100)];
        for id in 1..=6 {
            let spec = DgpSpec::model(id, 200, 2).unwrap();
            for d in designs {
                let r = run_rep(&spec, d, &cfg, spec.true_ate(), &RandomSource::new(id as u64)).unwrap();
                assert!(r.theta_hat.is_finite() && r.v_hat > 0.0, "model {id} {d}");
            }
        }
    }

    #[test]
    fn self_baseline_is_exact() {
        let spec = DgpSpec::model(5, 120, 2).unwrap();
        let cfg = SimConfig { reps: 10, ..Default::default() };
        let t = run_design_comparison(&spec, &[DesignId::Cr, DesignId::Loc], &cfg, &RandomSource::new(3)).unwrap();
        let cr = t.get(DesignId::Cr).unwrap();
        assert_eq!((cr.sd_ratio, cr.pct_delta_ci), (1.0, 0.0));
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + 6 * 2);
    }

    #[test]
    fn comparison_needs_baseline() {
        let spec = DgpSpec::model(1, 50, 2).unwrap();
        let cfg = SimConfig { reps: 3, ..Default::default() };
        assert!(run_design_comparison(&spec, &[DesignId::Loc], &cfg, &RandomSource::new(1)).is_err());
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let spec = DgpSpec::model(2, 100, 2).unwrap();
        let cfg = SimConfig { reps: 8, ..Default::default() };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| run_design_comparison(&spec, &[DesignId::Cr, DesignId::Opt], &cfg, &RandomSource::new(9)).unwrap())
        };
        assert_eq!(run(1), run(3));
    }

    fn table_with(psi: Vec<Vec<f64>>, y: Vec<f64>) -> UnitTable {
        let mut t = UnitTable::from_psi(Matrix::from_rows(&psi).unwrap()).unwrap();
        t.y_obs = Some(y);
        t
    }

    #[test]
    fn impute_two_units_swap() {
        let t = table_with(vec![vec![0.0], vec![1.0]], vec![3.0, 7.0]);
        let full = impute_panel(&t, &[1, 0], None).unwrap();
        assert_eq!(full.y1.unwrap(), vec![3.0, 3.0]);
        assert_eq!(full.y0.unwrap(), vec![7.0, 7.0]);
        assert!(impute_panel(&t, &[1, 1], None).is_err());
    }

    #[test]
    fn impute_matches_exhaustive_scan() {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = 50;
        // a coarse grid produces distance ties
        let psi: Vec<Vec<f64>> = (0..n).map(|_| vec![r.random_range(0..5) as f64, r.random_range(0..5) as f64]).collect();
        let y: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let d: Vec<u8> = (0..n).map(|_| r.random_range(0..2)).collect();
        let full = impute_panel(&table_with(psi.clone(), y.clone()), &d, None).unwrap();
        for i in 0..n {
            let mut best: Option<(f64, usize)> = None;
            for j in 0..n {
                if d[j] == d[i] {
                    continue;
                }
                let dist = sq_dist(&psi[i], &psi[j]);
                if best.is_none_or(|b| dist < b.0) {
                    best = Some((dist, j));
                }
            }
            let other = y[best.unwrap().1];
            let (own, borrowed) = if d[i] == 1 { (full.y1.as_ref(), full.y0.as_ref()) } else { (full.y0.as_ref(), full.y1.as_ref()) };
            assert_eq!(own.unwrap()[i], y[i]);
            assert_eq!(borrowed.unwrap()[i], other);
        }
    }
}
