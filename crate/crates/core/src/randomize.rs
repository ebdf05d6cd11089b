//! Local randomization, complete randomization and the two-stage design.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;

use crate::design::{DesignResult, GroupPartition};
use crate::error::{invalid, Result};
use crate::matching::build_k_tuples;
use crate::matrix::Matrix;
use crate::propensity::{Propensity, PropensityMap};
use crate::rng::RandomSource;
use crate::units::UnitTable;

/// Indicators, the groups they were drawn in, and any warnings.
#[derive(Clone, Debug, PartialEq)]
pub struct Randomization {
    pub x: Vec<u8>,
    pub partition: GroupPartition,
    pub warnings: Vec<String>,
}

struct StratumDraw {
    picks: Vec<(usize, u8)>,
    partition: GroupPartition,
    warning: Option<String>,
}

fn draw_stratum(
    points: &Matrix,
    idx: &[usize],
    level: Propensity,
    block: usize,
    tag: &str,
    rng: &RandomSource,
) -> Result<StratumDraw> {
    let (a, k) = (level.num() as usize, level.den() as usize);
    let key = format!("{tag}/{block}/{level}");
    let mut sel = rng.stream(&format!("{key}/select"), 0);
    let mut rem = rng.stream(&format!("{key}/remainder"), 0);
    let mut picks = Vec::with_capacity(idx.len());
    let mut partition = GroupPartition::default();
    let mut warning = None;
    let mut iid = |units: &[usize], picks: &mut Vec<(usize, u8)>| {
        for &i in units {
            picks.push((i, (rem.random_range(0..k) < a) as u8));
        }
    };
    if idx.len() < k {
        warning = Some(format!(
            "stratum {level} has {} units, fewer than {k}; drawn independently",
            idx.len()
        ));
        iid(idx, &mut picks);
        partition.push(idx.to_vec(), level, true, block);
        return Ok(StratumDraw {
            picks,
            partition,
            warning,
        });
    }
    let tuples = build_k_tuples(&points.select_rows(idx), k)?;
    for g in &tuples.groups {
        let mut members: Vec<usize> = g.iter().map(|&i| idx[i]).collect();
        let mut order = members.clone();
        order.shuffle(&mut sel);
        for (r, &i) in order.iter().enumerate() {
            picks.push((i, (r < a) as u8));
        }
        members.sort_unstable();
        partition.push(members, level, false, block);
    }
    if !tuples.remainder.is_empty() {
        let members: Vec<usize> = tuples.remainder.iter().map(|&i| idx[i]).collect();
        iid(&members, &mut picks);
        partition.push(members, level, true, block);
    }
    Ok(StratumDraw {
        picks,
        partition,
        warning,
    })
}

/// Local randomization of the units in `subset` with per-unit propensities
/// `props` (indexed globally). Each stratum uses its own sub-stream.
pub(crate) fn randomize_subset(
    points: &Matrix,
    subset: &[usize],
    props: &[Propensity],
    block: usize,
    tag: &str,
    rng: &RandomSource,
) -> Result<(Vec<(usize, u8)>, GroupPartition, Vec<String>)> {
    let mut strata: std::collections::BTreeMap<Propensity, Vec<usize>> = Default::default();
    for &i in subset {
        strata.entry(props[i]).or_default().push(i);
    }
    let strata: Vec<(Propensity, Vec<usize>)> = strata.into_iter().collect();
    let draws: Vec<Result<StratumDraw>> = strata
        .par_iter()
        .map(|(level, idx)| draw_stratum(points, idx, *level, block, tag, rng))
        .collect();
    let mut picks = Vec::with_capacity(subset.len());
    let mut part = GroupPartition::default();
    let mut warnings = Vec::new();
    for d in draws {
        let d = d?;
        picks.extend(d.picks);
        part.extend(d.partition);
        warnings.extend(d.warning);
    }
    Ok((picks, part, warnings))
}

/// Local randomization over all rows of `points`: units are split by exact
/// propensity level, matched into k-tuples within each level, and exactly
/// `a` of every full tuple of level `a/k` are selected. Remainder units are
/// drawn independently with probability `a/k`.
pub fn local_randomize(points: &Matrix, q: &PropensityMap, rng: &RandomSource) -> Result<Randomization> {
    let n = points.rows();
    if q.len() != n {
        return Err(invalid("propensity map does not cover every unit"));
    }
    let all: Vec<usize> = (0..n).collect();
    let (picks, partition, warnings) = randomize_subset(points, &all, q.values(), 0, "local", rng)?;
    let mut x = vec![0u8; n];
    for (i, v) in picks {
        x[i] = v;
    }
    Ok(Randomization { x, partition, warnings })
}

/// `round(n a / k)` with exact halves rounded down.
pub fn rounded_count(n: usize, pi: Propensity) -> usize {
    let num = n as u64 * pi.num() as u64;
    let k = pi.den() as u64;
    let (base, r) = (num / k, num % k);
    (base + (2 * r > k) as u64) as usize
}

/// Exactly `round(n a / k)` ones placed uniformly at random.
pub fn complete_randomize(n: usize, pi: Propensity, rng: &RandomSource) -> Vec<u8> {
    let c = rounded_count(n, pi);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng.stream("complete", 0));
    let mut x = vec![0u8; n];
    for &i in &idx[..c] {
        x[i] = 1;
    }
    x
}

/// Complete randomization of `subset` written as local randomization over
/// uniformly random tuples, so that it carries a group structure. The
/// number selected is exactly `round(|subset| a / k)`.
pub fn random_tuples(subset: &[usize], pi: Propensity, rng: &RandomSource) -> Randomization {
    let (a, k) = (pi.num() as usize, pi.den() as usize);
    let mut order = subset.to_vec();
    order.shuffle(&mut rng.stream("tuples", 0));
    let n_max = subset.iter().copied().max().map_or(0, |m| m + 1);
    let mut x = vec![0u8; n_max];
    let mut partition = GroupPartition::default();
    let full = order.len() / k * k;
    for chunk in order[..full].chunks(k) {
        for &i in &chunk[..a] {
            x[i] = 1;
        }
        let mut g = chunk.to_vec();
        g.sort_unstable();
        partition.push(g, pi, false, 0);
    }
    let rest = &order[full..];
    if !rest.is_empty() {
        let c = rounded_count(rest.len(), pi);
        for &i in &rest[..c] {
            x[i] = 1;
        }
        let mut g = rest.to_vec();
        g.sort_unstable();
        partition.push(g, pi, true, 0);
    }
    Randomization {
        x,
        partition,
        warnings: Vec::new(),
    }
}

fn same_column(a: &Matrix, ja: usize, b: &Matrix, jb: usize) -> bool {
    (0..a.rows()).all(|i| a.get(i, ja).to_bits() == b.get(i, jb).to_bits())
}

/// Whether every column of `psi1`, and `q` itself when it varies, appears
/// verbatim as a column of `psi2`.
pub fn is_coordinate_subvector(psi1: &Matrix, q: &PropensityMap, psi2: &Matrix) -> bool {
    let cols_ok = (0..psi1.cols()).all(|j| (0..psi2.cols()).any(|j2| same_column(psi1, j, psi2, j2)));
    let qv = Matrix::column(&q.as_f64());
    let q_ok = q.is_constant() || (0..psi2.cols()).any(|j2| same_column(&qv, 0, psi2, j2));
    cols_ok && q_ok
}

/// Local randomization of every unit on `psi1` with `q`.
pub fn sample_stage(table: &UnitTable, q: &PropensityMap, rng: &RandomSource) -> Result<Randomization> {
    let n = table.n();
    if q.len() != n {
        return Err(invalid("propensity map does not cover every unit"));
    }
    let all: Vec<usize> = (0..n).collect();
    let (picks, partition, warnings) = randomize_subset(&table.psi1, &all, q.values(), 0, "sample", rng)?;
    let mut x = vec![0u8; n];
    for (i, v) in picks {
        x[i] = v;
    }
    Ok(Randomization { x, partition, warnings })
}

/// Assigns treatment among the units with `t = 1` on `psi2` with `p`.
/// With `subordinate`, matching runs separately inside every level of `q`.
pub fn assign_stage(
    table: &UnitTable,
    t: &[u8],
    q: &PropensityMap,
    p: &PropensityMap,
    subordinate: bool,
    rng: &RandomSource,
) -> Result<Randomization> {
    let n = table.n();
    if t.len() != n || q.len() != n || p.len() != n {
        return Err(invalid("propensity maps must cover every unit"));
    }
    let sampled: Vec<usize> = (0..n).filter(|&i| t[i] == 1).collect();
    if sampled.is_empty() {
        return Err(invalid("no units were sampled"));
    }
    let mut d = vec![0u8; n];
    let mut assignment = GroupPartition::default();
    let mut warnings = Vec::new();
    let blocks: Vec<Vec<usize>> = if subordinate && !q.is_constant() {
        q.levels()
            .iter()
            .map(|lv| sampled.iter().copied().filter(|&i| q.get(i) == *lv).collect())
            .collect()
    } else {
        vec![sampled.clone()]
    };
    for (b, subset) in blocks.iter().enumerate() {
        if subset.is_empty() {
            continue;
        }
        let (picks, part, w) = randomize_subset(&table.psi2, subset, p.values(), b, "assign", rng)?;
        for (i, v) in picks {
            d[i] = v;
        }
        assignment.extend(part);
        warnings.extend(w);
    }
    let psi1_in = is_coordinate_subvector(&table.psi1, &PropensityMap::constant(1, Propensity::ONE), &table.psi2);
    let q_in = is_coordinate_subvector(&table.psi1, q, &table.psi2);
    if !q.is_constant() && !(psi1_in && (subordinate || q_in)) {
        warnings.push(
            "sampling propensity varies but (psi1, q) is not a coordinate subvector of psi2; \
             consider subordinate assignment or adding these columns to psi2"
                .into(),
        );
    }
    Ok(Randomization {
        x: d,
        partition: assignment,
        warnings,
    })
}

/// Samples on `psi1` with `q`, then assigns treatment to the sampled units
/// on `psi2` with `p`. With `subordinate`, assignment matching runs
/// separately inside every sampling stratum.
pub fn two_stage(
    table: &UnitTable,
    q: &PropensityMap,
    p: &PropensityMap,
    subordinate: bool,
    rng: &RandomSource,
) -> Result<DesignResult> {
    if p.len() != table.n() {
        return Err(invalid("propensity maps must cover every unit"));
    }
    let s = sample_stage(table, q, rng)?;
    let a = assign_stage(table, &s.x, q, p, subordinate, rng)?;
    let mut warnings = s.warnings;
    warnings.extend(a.warnings);
    Ok(DesignResult {
        t: s.x,
        d: a.x,
        sampling: s.partition,
        assignment: a.partition,
        q: q.clone(),
        p: p.clone(),
        seed: rng.seed(),
        warnings,
    })
}

/// Samples by complete randomization written as random tuples, then
/// assigns either the same way or, with `local_assignment`, by local
/// randomization of the sampled units on `psi2`.
pub fn complete_two_stage(
    table: &UnitTable,
    q: Propensity,
    p: Propensity,
    local_assignment: bool,
    rng: &RandomSource,
) -> Result<DesignResult> {
    let n = table.n();
    let all: Vec<usize> = (0..n).collect();
    let s = random_tuples(&all, q, &rng.child("sample", 0));
    let mut t = s.x;
    t.resize(n, 0);
    let sampled: Vec<usize> = (0..n).filter(|&i| t[i] == 1).collect();
    if sampled.is_empty() {
        return Err(invalid("no units were sampled"));
    }
    let pm = PropensityMap::constant(n, p);
    let mut d = vec![0u8; n];
    let (assignment, warnings) = if local_assignment {
        let (picks, part, w) = randomize_subset(&table.psi2, &sampled, pm.values(), 0, "assign", rng)?;
        for (i, v) in picks {
            d[i] = v;
        }
        (part, w)
    } else {
        let r = random_tuples(&sampled, p, &rng.child("assign", 0));
        for &i in &sampled {
            d[i] = r.x[i];
        }
        (r.partition, Vec::new())
    };
    Ok(DesignResult {
        t,
        d,
        sampling: s.partition,
        assignment,
        q: PropensityMap::constant(n, q),
        p: pm,
        seed: rng.seed(),
        warnings,
    })
}
