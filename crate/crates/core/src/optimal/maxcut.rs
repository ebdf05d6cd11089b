//! The alternating design: an allocation minimizing `((d - 1/2)'h)^2`
//! (equivalently a maximum cut of `K_n` with weights `h_i h_j`) and its
//! mirror, each drawn with probability one half.

use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::rng::RandomSource;

/// Solver for the allocation problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CutMode {
    /// Meet-in-the-middle enumeration, `n <= 24`.
    Exact,
    /// Best of `restarts` randomized local searches over single flips and
    /// swaps, each restarted from random kicks of its best point.
    Heuristic { restarts: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlternatingDesign {
    /// The optimal allocation, normalized so that unit 0 is in control.
    pub d_star: Vec<u8>,
    /// The realized draw: `d_star` or its mirror.
    pub d: Vec<u8>,
    /// `((d_star - 1/2)'h)^2`.
    pub objective: f64,
    /// `sum_{i in E1, j in E0} h_i h_j`.
    pub cut_weight: f64,
}

/// `sum_i s_i h_i` as a signed balance; `d_i = 1` counts `+h_i`.
fn signed_sum(h: &[f64], d: &[u8]) -> f64 {
    h.iter().zip(d).map(|(v, &x)| if x == 1 { *v } else { -*v }).sum()
}

fn cut_weight(h: &[f64], d: &[u8]) -> f64 {
    let a: f64 = h.iter().zip(d).filter(|t| *t.1 == 1).map(|t| t.0).sum();
    let b: f64 = h.iter().zip(d).filter(|t| *t.1 == 0).map(|t| t.0).sum();
    a * b
}

fn normalize(mut d: Vec<u8>) -> Vec<u8> {
    if d.first() == Some(&1) {
        d.iter_mut().for_each(|x| *x = 1 - *x);
    }
    d
}

fn bits(mask: u32, n: usize) -> Vec<u8> {
    (0..n).map(|i| (mask >> i & 1) as u8).collect()
}

/// `(objective, mask)` minimizing over every allocation by enumeration of
/// all `2^n` vectors. Test oracle and fallback for tiny inputs.
pub fn brute_force_balance(h: &[f64]) -> Result<(f64, Vec<u8>)> {
    let n = h.len();
    if n == 0 || n > 24 {
        return Err(invalid(format!("brute force needs 1 <= n <= 24, got {n}")));
    }
    let mut best = (f64::INFINITY, 0u32);
    for mask in 0u32..(1 << n) {
        let s: f64 = (0..n).map(|i| if mask >> i & 1 == 1 { h[i] } else { -h[i] }).sum();
        let obj = s * s / 4.0;
        if obj < best.0 {
            best = (obj, mask);
        }
    }
    Ok((best.0, bits(best.1, n)))
}

fn half_sums(h: &[f64]) -> Vec<(f64, u32)> {
    let n = h.len();
    let mut out = Vec::with_capacity(1 << n);
    for mask in 0u32..(1 << n) {
        let s: f64 = (0..n).map(|i| if mask >> i & 1 == 1 { h[i] } else { -h[i] }).sum();
        out.push((s, mask));
    }
    out
}

fn exact(h: &[f64]) -> Vec<u8> {
    let n = h.len();
    let split = n / 2;
    let left = half_sums(&h[..split]);
    let mut right = half_sums(&h[split..]);
    right.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut best = (f64::INFINITY, u32::MAX);
    for &(s, lm) in &left {
        let at = right.partition_point(|r| r.0 < -s);
        for r in [at.wrapping_sub(1), at] {
            if let Some(&(t, rm)) = right.get(r) {
                let v = (s + t).abs();
                let mask = lm | rm << split;
                if v < best.0 || (v == best.0 && mask < best.1) {
                    best = (v, mask);
                }
            }
        }
    }
    bits(best.1, n)
}

fn local_search(h: &[f64], mut d: Vec<u8>) -> Vec<u8> {
    let n = h.len();
    let mut s = signed_sum(h, &d);
    loop {
        let sign = |x: u8| if x == 1 { 1.0 } else { -1.0 };
        let mut best = (s.abs(), None::<(usize, Option<usize>)>);
        for i in 0..n {
            let si = s - 2.0 * sign(d[i]) * h[i];
            if si.abs() < best.0 {
                best = (si.abs(), Some((i, None)));
            }
            for j in i + 1..n {
                if d[i] != d[j] {
                    let sj = si - 2.0 * sign(d[j]) * h[j];
                    if sj.abs() < best.0 {
                        best = (sj.abs(), Some((i, Some(j))));
                    }
                }
            }
        }
        let Some((i, j)) = best.1 else { break };
        if best.0 >= s.abs() * (1.0 - 1e-15) {
            break;
        }
        for v in std::iter::once(i).chain(j) {
            s -= 2.0 * sign(d[v]) * h[v];
            d[v] = 1 - d[v];
        }
    }
    d
}

/// One restart: descend from a random start, then repeatedly kick a few
/// coordinates and descend again, keeping the best allocation seen.
fn restart(h: &[f64], g: &mut crate::rng::Rng) -> Vec<u8> {
    let n = h.len();
    let start: Vec<u8> = (0..n).map(|_| g.random_range(0..2u8)).collect();
    let mut best = local_search(h, start);
    let mut best_s = signed_sum(h, &best).abs();
    for _ in 0..(10 * n).min(200) {
        let mut d = best.clone();
        for _ in 0..3.min(n) {
            let i = g.random_range(0..n);
            d[i] = 1 - d[i];
        }
        let d = local_search(h, d);
        let s = signed_sum(h, &d).abs();
        if s < best_s {
            best = d;
            best_s = s;
        }
    }
    best
}

fn heuristic(h: &[f64], restarts: usize, rng: &RandomSource) -> Vec<u8> {
    let runs: Vec<(f64, usize, Vec<u8>)> = (0..restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let d = restart(h, &mut rng.stream("maxcut/restart", r as u64));
            (signed_sum(h, &d).abs(), r, d)
        })
        .collect();
    runs.into_iter()
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|t| t.2)
        .unwrap()
}

/// Solves for `d*` and draws `d*` or `1 - d*` with probability one half.
pub fn alternating_design(h: &[f64], mode: CutMode, rng: &RandomSource) -> Result<AlternatingDesign> {
    let n = h.len();
    if n == 0 {
        return Err(invalid("balance vector is empty"));
    }
    if let Some(i) = h.iter().position(|v| !v.is_finite()) {
        return Err(invalid(format!("balance value of unit {i} is not finite")));
    }
    let d_star = normalize(match mode {
        CutMode::Exact => {
            if n > 24 {
                return Err(invalid(format!("exact mode supports n <= 24, got {n}")));
            }
            exact(h)
        }
        CutMode::Heuristic { restarts } => heuristic(h, restarts, rng),
    });
    let s = signed_sum(h, &d_star);
    let mirror = rng.stream("maxcut/mirror", 0).random_bool(0.5);
    let d = if mirror { d_star.iter().map(|x| 1 - x).collect() } else { d_star.clone() };
    Ok(AlternatingDesign {
        objective: s * s / 4.0,
        cut_weight: cut_weight(h, &d_star),
        d_star,
        d,
    })
}
