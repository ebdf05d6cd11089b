//! Group structures, realized designs, and their file formats.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};

use crate::error::{invalid, Error, Result};
use crate::propensity::{Propensity, PropensityMap};
use crate::units::RawTable;

/// Disjoint groups of unit indices, each tagged with its propensity stratum.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GroupPartition {
    pub groups: Vec<Vec<usize>>,
    pub stratum: Vec<Propensity>,
    pub remainder: Vec<bool>,
    /// Matching block of each group. Under sampling-subordinate assignment
    /// this is the index of the sampling stratum; otherwise 0.
    pub block: Vec<usize>,
}

impl GroupPartition {
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn push(&mut self, members: Vec<usize>, stratum: Propensity, remainder: bool, block: usize) {
        self.groups.push(members);
        self.stratum.push(stratum);
        self.remainder.push(remainder);
        self.block.push(block);
    }

    pub fn extend(&mut self, other: GroupPartition) {
        self.groups.extend(other.groups);
        self.stratum.extend(other.stratum);
        self.remainder.extend(other.remainder);
        self.block.extend(other.block);
    }

    /// Number of units covered.
    pub fn unit_count(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    /// Group index of every unit below `n`, if any.
    pub fn group_of(&self, n: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; n];
        for (g, members) in self.groups.iter().enumerate() {
            for &i in members {
                if i < n {
                    out[i] = Some(g);
                }
            }
        }
        out
    }

    pub fn full_groups(&self) -> impl Iterator<Item = (usize, &Vec<usize>)> {
        self.groups
            .iter()
            .enumerate()
            .filter(move |(g, _)| !self.remainder[*g])
    }

    /// Checks disjointness, coverage of `index_set`, group sizes and the
    /// one-remainder-per-stratum rule.
    pub fn validate(&self, index_set: &[usize]) -> Result<()> {
        let n = self.groups.len();
        if self.stratum.len() != n || self.remainder.len() != n || self.block.len() != n {
            return Err(invalid("partition field lengths differ"));
        }
        let mut seen = HashSet::new();
        for members in &self.groups {
            for &i in members {
                if !seen.insert(i) {
                    return Err(invalid(format!("unit {i} appears in two groups")));
                }
            }
        }
        let want: HashSet<usize> = index_set.iter().copied().collect();
        if want != seen {
            return Err(invalid("partition does not cover exactly the index set"));
        }
        let mut rem: HashSet<(usize, Propensity)> = HashSet::new();
        for g in 0..n {
            let k = self.stratum[g].den() as usize;
            let size = self.groups[g].len();
            if self.remainder[g] {
                if size >= k && k > 1 {
                    return Err(invalid(format!("remainder group {g} has {size} >= {k} units")));
                }
                if !rem.insert((self.block[g], self.stratum[g])) {
                    return Err(invalid(format!(
                        "two remainder groups for stratum {} in block {}",
                        self.stratum[g], self.block[g]
                    )));
                }
            } else if size != k {
                return Err(invalid(format!("group {g} has {size} units, stratum {} needs {k}", self.stratum[g])));
            }
        }
        Ok(())
    }

    /// Writes `unit_id,group_id,stratum,is_remainder`, one row per unit.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut rows: Vec<(usize, usize)> = Vec::new();
        for (g, members) in self.groups.iter().enumerate() {
            for &i in members {
                rows.push((i, g));
            }
        }
        rows.sort_unstable();
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["unit_id", "group_id", "stratum", "is_remainder"])?;
        for (i, g) in rows {
            wtr.write_record([
                i.to_string(),
                g.to_string(),
                self.stratum[g].to_string(),
                (self.remainder[g] as u8).to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Parses the format written by [`GroupPartition::write_csv`]. The file
    /// has no block column, so every group comes back in block 0.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let raw = RawTable::from_reader(r)?;
        let ids = raw.integers("unit_id")?;
        let gids = raw.integers("group_id")?;
        let strata = raw.propensities("stratum")?;
        let rems = raw.binary("is_remainder")?;
        let mut seen = HashSet::new();
        let mut by_group: BTreeMap<usize, (Vec<usize>, Propensity, bool)> = BTreeMap::new();
        for r in 0..raw.len() {
            if !seen.insert(ids[r]) {
                return Err(Error::Parse {
                    row: r + 1,
                    column: "unit_id".into(),
                    message: format!("unit {} listed twice", ids[r]),
                });
            }
            let e = by_group
                .entry(gids[r])
                .or_insert_with(|| (Vec::new(), strata[r], rems[r] == 1));
            if e.1 != strata[r] || e.2 != (rems[r] == 1) {
                return Err(Error::Parse {
                    row: r + 1,
                    column: "group_id".into(),
                    message: format!("group {} has inconsistent stratum or remainder flag", gids[r]),
                });
            }
            e.0.push(ids[r]);
        }
        let mut p = GroupPartition::default();
        for (_, (members, s, rem)) in by_group {
            p.push(members, s, rem, 0);
        }
        Ok(p)
    }
}

/// A realized two-stage design.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignResult {
    /// Sampling indicators.
    pub t: Vec<u8>,
    /// Treatment indicators, 0 wherever `t` is 0.
    pub d: Vec<u8>,
    pub sampling: GroupPartition,
    /// Groups over sampled units only.
    pub assignment: GroupPartition,
    pub q: PropensityMap,
    pub p: PropensityMap,
    pub seed: u64,
    pub warnings: Vec<String>,
}

fn check_counts(part: &GroupPartition, x: &[u8], what: &str) -> Result<()> {
    for (g, members) in part.full_groups() {
        let s: u32 = members.iter().map(|&i| x[i] as u32).sum();
        if s != part.stratum[g].num() {
            return Err(invalid(format!(
                "{what} group {g} has {s} selected, stratum {} needs {}",
                part.stratum[g],
                part.stratum[g].num()
            )));
        }
    }
    Ok(())
}

impl DesignResult {
    pub fn n(&self) -> usize {
        self.t.len()
    }

    pub fn sampled(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.t[i] == 1).collect()
    }

    pub fn n_sampled(&self) -> usize {
        self.t.iter().filter(|&&v| v == 1).count()
    }

    /// Linear-time structural check of every design invariant.
    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.d.len() != n || self.q.len() != n || self.p.len() != n {
            return Err(invalid("design vectors have different lengths"));
        }
        for i in 0..n {
            if self.t[i] > 1 || self.d[i] > 1 {
                return Err(invalid(format!("unit {i} has a non-binary indicator")));
            }
            if self.d[i] == 1 && self.t[i] == 0 {
                return Err(invalid(format!("unit {i} is treated but not sampled")));
            }
        }
        check_counts(&self.sampling, &self.t, "sampling")?;
        check_counts(&self.assignment, &self.d, "assignment")?;
        for members in &self.assignment.groups {
            if members.iter().any(|&i| self.t[i] == 0) {
                return Err(invalid("assignment group contains an unsampled unit"));
            }
        }
        Ok(())
    }

    /// Writes `unit_id,T,D,sampling_group,assignment_group,q,p`.
    /// Unsampled units have an empty assignment group.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let n = self.n();
        let sg = self.sampling.group_of(n);
        let ag = self.assignment.group_of(n);
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["unit_id", "T", "D", "sampling_group", "assignment_group", "q", "p"])?;
        for i in 0..n {
            wtr.write_record([
                i.to_string(),
                self.t[i].to_string(),
                self.d[i].to_string(),
                sg[i].map(|g| g.to_string()).unwrap_or_default(),
                ag[i].map(|g| g.to_string()).unwrap_or_default(),
                self.q.get(i).to_string(),
                self.p.get(i).to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Parses the format written by [`DesignResult::write_csv`]. Remainder
    /// flags are recovered from group sizes; the seed is not stored in the
    /// file and is set to 0.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let raw = RawTable::from_reader(r)?;
        let n = raw.len();
        if n == 0 {
            return Err(invalid("design file has no rows"));
        }
        let ids = raw.integers("unit_id")?;
        let t = raw.binary("T")?;
        let d = raw.binary("D")?;
        let q = raw.propensities("q")?;
        let p = raw.propensities("p")?;
        let sg = raw.strings("sampling_group")?;
        let ag = raw.strings("assignment_group")?;
        let mut pos = vec![usize::MAX; n];
        for (r, &id) in ids.iter().enumerate() {
            if id >= n || pos[id] != usize::MAX {
                return Err(Error::Parse {
                    row: r + 1,
                    column: "unit_id".into(),
                    message: format!("unit ids must be a permutation of 0..{n}"),
                });
            }
            pos[id] = r;
        }
        let order: Vec<usize> = pos;
        let mut out_t = vec![0u8; n];
        let mut out_d = vec![0u8; n];
        let mut out_q = Vec::with_capacity(n);
        let mut out_p = Vec::with_capacity(n);
        for (i, &r) in order.iter().enumerate() {
            out_t[i] = t[r];
            out_d[i] = d[r];
            out_q.push(q[r]);
            out_p.push(p[r]);
        }
        let build = |col: &[String], name: &str, props: &[Propensity], only_sampled: bool| -> Result<GroupPartition> {
            let mut by: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (i, &r) in order.iter().enumerate() {
                let s = col[r].as_str();
                if s.is_empty() {
                    if !only_sampled || t[r] == 1 {
                        return Err(Error::Parse {
                            row: r + 1,
                            column: name.into(),
                            message: "missing group id".into(),
                        });
                    }
                    continue;
                }
                if only_sampled && t[r] == 0 {
                    return Err(Error::Parse {
                        row: r + 1,
                        column: name.into(),
                        message: "unsampled unit has an assignment group".into(),
                    });
                }
                let g: usize = s.parse().map_err(|_| Error::Parse {
                    row: r + 1,
                    column: name.into(),
                    message: format!("`{s}` is not a group id"),
                })?;
                by.entry(g).or_default().push(i);
            }
            let mut part = GroupPartition::default();
            for (g, members) in by {
                let s = props[members[0]];
                if members.iter().any(|&i| props[i] != s) {
                    return Err(invalid(format!("{name} {g} mixes propensity strata")));
                }
                let rem = members.len() < s.den() as usize;
                part.push(members, s, rem, 0);
            }
            Ok(part)
        };
        let sampling = build(&sg, "sampling_group", &out_q, false)?;
        let mut assignment = build(&ag, "assignment_group", &out_p, true)?;
        let q = PropensityMap::new(out_q)?;
        // Blocks are not stored. When every assignment group sits inside one
        // sampling level, read them back as sampling-subordinate blocks.
        if !q.is_constant() {
            let level_of = |g: &Vec<usize>| q.levels().iter().position(|l| *l == q.get(g[0]));
            let homogeneous = assignment.groups.iter().all(|g| g.iter().all(|&i| q.get(i) == q.get(g[0])));
            if homogeneous {
                for g in 0..assignment.len() {
                    assignment.block[g] = level_of(&assignment.groups[g]).unwrap_or(0);
                }
            }
        }
        let res = DesignResult {
            t: out_t,
            d: out_d,
            sampling,
            assignment,
            q,
            p: PropensityMap::new(out_p)?,
            seed: 0,
            warnings: Vec::new(),
        };
        for i in 0..n {
            if res.d[i] == 1 && res.t[i] == 0 {
                return Err(Error::Parse {
                    row: order[i] + 1,
                    column: "D".into(),
                    message: "treated unit is not sampled".into(),
                });
            }
        }
        Ok(res)
    }
}

/// Maps group ids in first-appearance order, used when rebuilding partitions.
#[cfg(test)]
mod tests {
    use super::*;

    fn half() -> Propensity {
        Propensity::HALF
    }

    #[test]
    fn validate_catches_overlap_and_size() {
        let mut p = GroupPartition::default();
        p.push(vec![0, 1], half(), false, 0);
        p.push(vec![2, 3], half(), false, 0);
        assert!(p.validate(&[0, 1, 2, 3]).is_ok());
        assert!(p.validate(&[0, 1, 2]).is_err());
        let mut bad = p.clone();
        bad.groups[1] = vec![1, 3];
        assert!(bad.validate(&[0, 1, 3]).is_err());
        let mut two_rem = GroupPartition::default();
        two_rem.push(vec![0], half(), true, 0);
        two_rem.push(vec![1], half(), true, 0);
        assert!(two_rem.validate(&[0, 1]).is_err());
        two_rem.block[1] = 1;
        assert!(two_rem.validate(&[0, 1]).is_ok());
    }

    #[test]
    fn partition_roundtrip() {
        let mut p = GroupPartition::default();
        p.push(vec![3, 1], half(), false, 0);
        p.push(vec![0], Propensity::new(1, 3).unwrap(), true, 0);
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let back = GroupPartition::read_csv(&buf[..]).unwrap();
        assert_eq!(back.groups, vec![vec![1, 3], vec![0]]);
        assert_eq!(back.stratum, p.stratum);
        assert_eq!(back.remainder, p.remainder);
    }

    #[test]
    fn design_roundtrip() {
        let mut s = GroupPartition::default();
        s.push(vec![0, 1], half(), false, 0);
        s.push(vec![2, 3], half(), false, 0);
        let mut a = GroupPartition::default();
        a.push(vec![0, 3], half(), false, 0);
        let d = DesignResult {
            t: vec![1, 0, 0, 1],
            d: vec![0, 0, 0, 1],
            sampling: s,
            assignment: a,
            q: PropensityMap::constant(4, half()),
            p: PropensityMap::constant(4, half()),
            seed: 0,
            warnings: vec![],
        };
        d.validate().unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = DesignResult::read_csv(&buf[..]).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn design_validate_counts() {
        let mut s = GroupPartition::default();
        s.push(vec![0, 1], half(), false, 0);
        let d = DesignResult {
            t: vec![1, 1],
            d: vec![0, 0],
            sampling: s,
            assignment: GroupPartition::default(),
            q: PropensityMap::constant(2, half()),
            p: PropensityMap::constant(2, half()),
            seed: 0,
            warnings: vec![],
        };
        assert!(d.validate().is_err());
    }
}
