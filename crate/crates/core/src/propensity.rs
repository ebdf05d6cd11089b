//! Exact rational propensities.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A propensity `a/k` with `0 < a <= k` and `gcd(a, k) = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Propensity {
    num: u32,
    den: u32,
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

impl Propensity {
    pub const ONE: Propensity = Propensity { num: 1, den: 1 };
    pub const HALF: Propensity = Propensity { num: 1, den: 2 };

    /// Builds `num/den` in lowest terms.
    pub fn new(num: u32, den: u32) -> Result<Self> {
        if num == 0 || den == 0 || num > den {
            return Err(Error::Propensity(format!("{num}/{den}")));
        }
        let g = gcd(num as u64, den as u64) as u32;
        Ok(Propensity {
            num: num / g,
            den: den / g,
        })
    }

    pub fn num(&self) -> u32 {
        self.num
    }

    pub fn den(&self) -> u32 {
        self.den
    }

    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn is_one(&self) -> bool {
        self.num == self.den
    }

    /// `1 - a/k`, or `None` when that is zero.
    pub fn complement(&self) -> Option<Propensity> {
        if self.is_one() {
            None
        } else {
            Propensity::new(self.den - self.num, self.den).ok()
        }
    }

    /// The closest `a/k` with `k <= k_max`. Ties go toward 1/2, then downward.
    pub fn nearest(x: f64, k_max: u32) -> Result<Self> {
        if !(x > 0.0 && x <= 1.0) || k_max == 0 {
            return Err(Error::Propensity(format!("{x}")));
        }
        let mut best: Option<(f64, f64, Propensity)> = None;
        for k in 1..=k_max {
            for a in 1..=k {
                let p = Propensity::new(a, k)?;
                let d = (p.value() - x).abs();
                let h = (p.value() - 0.5).abs();
                let better = match best {
                    None => true,
                    Some((bd, bh, bp)) => {
                        d < bd - 1e-15
                            || ((d - bd).abs() <= 1e-15
                                && (h < bh - 1e-15 || ((h - bh).abs() <= 1e-15 && p < bp)))
                    }
                };
                if better {
                    best = Some((d, h, p));
                }
            }
        }
        Ok(best.unwrap().2)
    }
}

impl Ord for Propensity {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.num as u64 * other.den as u64).cmp(&(other.num as u64 * self.den as u64))
    }
}

impl PartialOrd for Propensity {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Propensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for Propensity {
    type Err = Error;

    /// Accepts `a/k` or a bare integer `1`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Propensity(s.to_string());
        let t = s.trim();
        let (a, k) = match t.split_once('/') {
            Some((a, k)) => (a.trim(), k.trim()),
            None => (t, "1"),
        };
        let a: u32 = a.parse().map_err(|_| bad())?;
        let k: u32 = k.parse().map_err(|_| bad())?;
        Propensity::new(a, k).map_err(|_| bad())
    }
}

impl TryFrom<String> for Propensity {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Propensity> for String {
    fn from(p: Propensity) -> String {
        p.to_string()
    }
}

/// Per-unit propensities together with their distinct levels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PropensityMap {
    values: Vec<Propensity>,
    levels: Vec<Propensity>,
}

impl PropensityMap {
    pub fn new(values: Vec<Propensity>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("empty propensity map".into()));
        }
        let mut levels = values.clone();
        levels.sort();
        levels.dedup();
        Ok(PropensityMap { values, levels })
    }

    pub fn constant(n: usize, p: Propensity) -> Self {
        PropensityMap {
            values: vec![p; n],
            levels: vec![p],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[Propensity] {
        &self.values
    }

    /// Distinct levels in increasing order.
    pub fn levels(&self) -> &[Propensity] {
        &self.levels
    }

    pub fn get(&self, i: usize) -> Propensity {
        self.values[i]
    }

    pub fn is_constant(&self) -> bool {
        self.levels.len() == 1
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.values.iter().map(|p| p.value()).collect()
    }

    /// Largest denominator among the levels.
    pub fn max_den(&self) -> u32 {
        self.levels.iter().map(|p| p.den).max().unwrap_or(1)
    }

    /// Unit indices grouped by level, in increasing level order.
    pub fn strata(&self) -> BTreeMap<Propensity, Vec<usize>> {
        let mut out: BTreeMap<Propensity, Vec<usize>> = BTreeMap::new();
        for (i, p) in self.values.iter().enumerate() {
            out.entry(*p).or_default().push(i);
        }
        out
    }

    /// The map restricted to `idx`, in that order.
    pub fn restrict(&self, idx: &[usize]) -> Result<Self> {
        PropensityMap::new(idx.iter().map(|&i| self.values[i]).collect())
    }
}
