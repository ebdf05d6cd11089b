//! The six simulation models and their population quantities.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Result};
use crate::matrix::Matrix;
use crate::optimal::{ProfileSource, VarianceProfile};
use crate::propensity::Propensity;
use crate::rng::RandomSource;
use crate::units::UnitTable;

/// Conditional mean family.
#[derive(Clone, Debug, PartialEq)]
pub enum Outcome {
    /// `mu_0 = beta0'psi`, `mu_1 = beta1'psi + q_scale (1'psi)^2`.
    Polynomial { beta0: Vec<f64>, beta1: Vec<f64>, q_scale: f64 },
    /// `mu_d = scale * Cauchy_cdf(beta_d'psi)`.
    Cauchy { beta0: Vec<f64>, beta1: Vec<f64>, scale: f64 },
    /// `mu_1 = 4 sum sin(psi) + 2 1'psi`, `mu_0 = 2 sum cos(psi)`.
    Trigonometric,
}

#[derive(Clone, Debug, PartialEq)]
pub enum CostRule {
    /// `low` if `psi_1 <= 0`, otherwise `high`.
    Split { low: f64, high: f64 },
    /// `base + slope |psi|^2 / nu`.
    Quadratic { base: f64, slope: f64 },
}

/// Conditional variances `zeta_d(psi)`.
#[derive(Clone, Debug, PartialEq)]
pub enum Hetero {
    Constant { zeta0: f64, zeta1: f64 },
    /// `zeta_0 = base`, `zeta_1 = base + slope |psi|^2 / nu`.
    Radial { base: f64, slope: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Residual {
    Gaussian,
    /// Uniform on `[-sqrt 3, sqrt 3]`.
    Uniform,
}

/// A fully parameterized data-generating process.
#[derive(Clone, Debug, PartialEq)]
pub struct DgpSpec {
    /// 1 to 6 for the registry models, 0 for custom ones.
    pub model_id: u8,
    pub n: usize,
    pub dim: usize,
    /// `psi` is uniform on `[-half_width, half_width]^dim`.
    pub half_width: f64,
    pub outcome: Outcome,
    pub cost: CostRule,
    pub budget: f64,
    /// Baseline assignment propensity.
    pub p: Propensity,
    pub hetero: Hetero,
    pub residual: Residual,
}

fn harmonic(scale: f64, dim: usize) -> Vec<f64> {
    (1..=dim).map(|m| scale / m as f64).collect()
}

impl DgpSpec {
    /// Registry model `id` in `1..=6`.
    pub fn model(id: u8, n: usize, dim: usize) -> Result<Self> {
        if dim == 0 || n == 0 {
            return Err(invalid("need n >= 1 and dim >= 1"));
        }
        let m1 = DgpSpec {
            model_id: 1,
            n,
            dim,
            half_width: 1.0,
            outcome: Outcome::Polynomial {
                beta0: vec![0.0; dim],
                beta1: harmonic(3.0, dim),
                q_scale: 0.5,
            },
            cost: CostRule::Split { low: 1.0, high: 10.0 },
            budget: 4.0,
            p: Propensity::new(3, 8)?,
            hetero: Hetero::Constant { zeta0: 1.0, zeta1: 9.0 },
            residual: Residual::Gaussian,
        };
        let quad_cost = CostRule::Quadratic { base: 0.5, slope: 10.0 };
        let radial = Hetero::Radial { base: 5.0, slope: 30.0 };
        Ok(match id {
            1 => m1,
            2 => DgpSpec {
                model_id: 2,
                cost: CostRule::Split { low: 1.0, high: 4.0 },
                budget: 1.0,
                p: Propensity::new(1, 2)?,
                hetero: radial,
                residual: Residual::Uniform,
                ..m1
            },
            3 => DgpSpec {
                model_id: 3,
                cost: quad_cost,
                budget: 2.0,
                hetero: Hetero::Constant { zeta0: 2.0, zeta1: 2.0 },
                ..m1
            },
            4 => DgpSpec {
                model_id: 4,
                outcome: Outcome::Polynomial {
                    beta0: harmonic(2.0, dim),
                    beta1: harmonic(3.0, dim),
                    q_scale: 2.0,
                },
                cost: quad_cost,
                budget: 2.0,
                hetero: radial,
                ..m1
            },
            5 => DgpSpec {
                model_id: 5,
                outcome: Outcome::Cauchy {
                    beta0: harmonic(10.0, dim),
                    beta1: harmonic(10.0, dim),
                    scale: 5.0,
                },
                p: Propensity::new(1, 2)?,
                hetero: Hetero::Constant { zeta0: 2.0, zeta1: 2.0 },
                ..m1
            },
            6 => DgpSpec {
                model_id: 6,
                half_width: std::f64::consts::PI,
                outcome: Outcome::Trigonometric,
                p: Propensity::new(3, 10)?,
                hetero: Hetero::Constant { zeta0: 6.0, zeta1: 6.0 },
                ..m1
            },
            _ => return Err(invalid(format!("unknown model {id}, expected 1 to 6"))),
        })
    }

    pub fn with_n(&self, n: usize) -> Self {
        DgpSpec { n, ..self.clone() }
    }

    fn sq_norm(psi: &[f64]) -> f64 {
        psi.iter().map(|v| v * v).sum()
    }

    pub fn mu(&self, d: u8, psi: &[f64]) -> f64 {
        match &self.outcome {
            Outcome::Polynomial { beta0, beta1, q_scale } => {
                let dot = |b: &[f64]| b.iter().zip(psi).map(|(x, y)| x * y).sum::<f64>();
                if d == 1 {
                    let s: f64 = psi.iter().sum();
                    dot(beta1) + q_scale * s * s
                } else {
                    dot(beta0)
                }
            }
            Outcome::Cauchy { beta0, beta1, scale } => {
                let b = if d == 1 { beta1 } else { beta0 };
                let z: f64 = b.iter().zip(psi).map(|(x, y)| x * y).sum();
                scale * (0.5 + z.atan() / std::f64::consts::PI)
            }
            Outcome::Trigonometric => {
                if d == 1 {
                    psi.iter().map(|v| 4.0 * v.sin() + 2.0 * v).sum()
                } else {
                    psi.iter().map(|v| 2.0 * v.cos()).sum()
                }
            }
        }
    }

    pub fn zeta(&self, d: u8, psi: &[f64]) -> f64 {
        match self.hetero {
            Hetero::Constant { zeta0, zeta1 } => {
                if d == 1 {
                    zeta1
                } else {
                    zeta0
                }
            }
            Hetero::Radial { base, slope } => {
                if d == 1 {
                    base + slope * Self::sq_norm(psi) / self.dim as f64
                } else {
                    base
                }
            }
        }
    }

    pub fn cost_at(&self, psi: &[f64]) -> f64 {
        match self.cost {
            CostRule::Split { low, high } => {
                if psi[0] <= 0.0 {
                    low
                } else {
                    high
                }
            }
            CostRule::Quadratic { base, slope } => base + slope * Self::sq_norm(psi) / self.dim as f64,
        }
    }

    /// Population mean cost.
    pub fn mean_cost(&self) -> f64 {
        match self.cost {
            CostRule::Split { low, high } => (low + high) / 2.0,
            CostRule::Quadratic { base, slope } => base + slope * self.half_width.powi(2) / 3.0,
        }
    }

    /// Population ATE in closed form.
    pub fn true_ate(&self) -> f64 {
        let var = self.half_width.powi(2) / 3.0;
        match &self.outcome {
            Outcome::Polynomial { q_scale, .. } => q_scale * self.dim as f64 * var,
            Outcome::Cauchy { beta0, beta1, .. } if beta0 == beta1 => 0.0,
            Outcome::Cauchy { .. } => self.monte_carlo_ate(1_000_000, 0),
            // sin, cos and the identity all integrate to 0 over [-pi, pi]
            Outcome::Trigonometric => 0.0,
        }
    }

    pub fn draw_psi(&self, rng: &mut crate::rng::Rng) -> Vec<f64> {
        (0..self.dim)
            .map(|_| rng.random_range(-self.half_width..=self.half_width))
            .collect()
    }

    /// `E[mu_1 - mu_0]` by Monte Carlo over `draws` covariate draws.
    pub fn monte_carlo_ate(&self, draws: usize, seed: u64) -> f64 {
        let mut rng = RandomSource::new(seed).stream("sim/ate", 0);
        let mut acc = 0.0;
        for _ in 0..draws {
            let psi = self.draw_psi(&mut rng);
            acc += self.mu(1, &psi) - self.mu(0, &psi);
        }
        acc / draws as f64
    }

    fn residual_draw(&self, rng: &mut crate::rng::Rng) -> f64 {
        match self.residual {
            Residual::Gaussian => StandardNormal.sample(rng),
            Residual::Uniform => rng.random_range(-3f64.sqrt()..=3f64.sqrt()),
        }
    }

    /// Limiting `n Var(theta_hat)` under local sampling and assignment with
    /// constant `q`, `p`: `Var(tau) + E[(zeta1/p + zeta0/(1-p)) / q]`,
    /// integrated by Monte Carlo.
    pub fn local_variance(&self, q: f64, p: f64, draws: usize, seed: u64) -> f64 {
        let mut rng = RandomSource::new(seed).stream("sim/variance", 0);
        let (mut s, mut ss, mut z) = (0.0, 0.0, 0.0);
        for _ in 0..draws {
            let psi = self.draw_psi(&mut rng);
            let tau = self.mu(1, &psi) - self.mu(0, &psi);
            s += tau;
            ss += tau * tau;
            z += (self.zeta(1, &psi) / p + self.zeta(0, &psi) / (1.0 - p)) / q;
        }
        let m = draws as f64;
        ss / m - (s / m).powi(2) + z / m
    }

    /// Standard deviations `sqrt(zeta_d)` at the rows of `psi`.
    pub fn oracle_profile(&self, psi: &Matrix) -> Result<VarianceProfile> {
        let z = |d: u8| -> Vec<f64> { (0..psi.rows()).map(|i| self.zeta(d, psi.row(i))).collect() };
        VarianceProfile::from_variances(&z(1), &z(0), ProfileSource::Oracle)
    }
}

/// Draws `n` units with covariates, costs and both potential outcomes.
/// The assignment variables alias the sampling variables.
pub fn generate_dgp(spec: &DgpSpec, rng: &RandomSource) -> Result<UnitTable> {
    let mut g = rng.stream("sim/dgp", 0);
    let n = spec.n;
    let mut rows = Vec::with_capacity(n);
    let (mut y0, mut y1, mut cost) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let psi = spec.draw_psi(&mut g);
        let e0 = spec.residual_draw(&mut g);
        let e1 = spec.residual_draw(&mut g);
        y0.push(spec.mu(0, &psi) + spec.zeta(0, &psi).sqrt() * e0);
        y1.push(spec.mu(1, &psi) + spec.zeta(1, &psi).sqrt() * e1);
        cost.push(spec.cost_at(&psi));
        rows.push(psi);
    }
    let mut table = UnitTable::from_psi(Matrix::from_rows(&rows)?)?;
    table.y0 = Some(y0);
    table.y1 = Some(y1);
    table.cost = Some(cost);
    Ok(table)
}
