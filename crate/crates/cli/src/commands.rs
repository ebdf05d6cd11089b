use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use stratakit::estimate::{estimate_design, VarianceMethod};
use stratakit::matching::{build_k_tuples, match_within_folds};
use stratakit::optimal::{alternating_design, BudgetSpec, CutMode, ProfileSource, VarianceProfile};
use stratakit::pilot::{estimate_variance_functions, feasible_optimal_design, Bandwidth, FeasibleDesign, PilotData};
use stratakit::randomize::{assign_stage, sample_stage};
use stratakit::sim::{run_design_comparison, DesignId, DgpSpec, SimConfig};
use stratakit::units::RawTable;
use stratakit::{
    standardize, ColumnSchema, DesignResult, GroupPartition, Propensity, PropensityMap, RandomSource, UnitTable,
};

use crate::output::{hash_input, write_atomic, InputRecord, Manifest};
use crate::{
    AssignArgs, Cli, CliError, Command, DesignArgs, EstimateArgs, MatchArgs, MaxcutArgs, OptimizeArgs,
    PilotDesignArgs, SampleArgs, SimulateArgs, UnitArgs,
};

type Res<T> = Result<T, CliError>;

/// What a command produced besides its output file.
struct Outcome {
    summary: Value,
    warnings: Vec<String>,
}

fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s = rand::random::<u64>();
        eprintln!("seed: {s}");
        s
    })
}

pub fn run(cli: Cli) -> Res<()> {
    let (name, flags, randomized) = match &cli.command {
        Command::Sample(a) => ("sample", serde_json::to_value(a)?, true),
        Command::Assign(a) => ("assign", serde_json::to_value(a)?, true),
        Command::Design(a) => ("design", serde_json::to_value(a)?, true),
        Command::Optimize(a) => ("optimize", serde_json::to_value(a)?, false),
        Command::PilotDesign(a) => ("pilot-design", serde_json::to_value(a)?, false),
        Command::Estimate(a) => ("estimate", serde_json::to_value(a)?, false),
        Command::Simulate(a) => ("simulate", serde_json::to_value(a)?, true),
        Command::Maxcut(a) => ("maxcut", serde_json::to_value(a)?, true),
        Command::Match(a) => ("match", serde_json::to_value(a)?, false),
    };
    let seed = randomized.then(|| resolve_seed(cli.seed));
    let rng = RandomSource::new(seed.unwrap_or(0));
    let mut inputs = Vec::new();
    let (out, outcome) = match &cli.command {
        Command::Sample(a) => (&a.out, sample(a, &rng, &mut inputs)?),
        Command::Assign(a) => (&a.out, assign(a, &rng, &mut inputs)?),
        Command::Design(a) => (&a.out, design(a, &rng, &mut inputs)?),
        Command::Optimize(a) => (&a.out, optimize(a, &mut inputs)?),
        Command::PilotDesign(a) => (&a.out, pilot_design(a, &mut inputs)?),
        Command::Estimate(a) => (&a.out, estimate(a, &mut inputs)?),
        Command::Simulate(a) => (&a.out, simulate(a, &rng)?),
        Command::Maxcut(a) => (&a.out, maxcut(a, &rng, &mut inputs)?),
        Command::Match(a) => (&a.out, match_units(a, &mut inputs)?),
    };
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    Manifest {
        command: name.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed,
        inputs,
        flags,
        outputs: vec![out.clone()],
        summary: outcome.summary,
        warnings: outcome.warnings,
    }
    .emit()
}

fn read_raw(flag: &str, path: &Path, inputs: &mut Vec<InputRecord>) -> Res<RawTable> {
    inputs.push(hash_input(flag, path)?);
    Ok(RawTable::from_path(path)?)
}

fn load_table(u: &UnitArgs, raw: &RawTable, cost: Option<&str>) -> Res<UnitTable> {
    let schema = ColumnSchema {
        psi1: u.psi1_cols.clone(),
        psi2: u.psi2_cols.clone(),
        cost: cost.map(str::to_string),
        ..Default::default()
    };
    let t = UnitTable::from_raw(raw, &schema)?;
    Ok(if u.raw_covariates { t } else { standardize(&t)? })
}

/// A command-line propensity: a constant `a/k` or the name of a column of
/// `a/k` strings. Decimals are refused.
fn propensity_arg(flag: &str, s: &str, raw: Option<&RawTable>, n: usize) -> Res<PropensityMap> {
    let t = s.trim();
    let numeric_like = t.chars().next().is_some_and(|c| c.is_ascii_digit() || c == '.' || c == '-');
    if t.contains('/') || numeric_like {
        return match t.parse::<Propensity>() {
            Ok(p) => Ok(PropensityMap::constant(n, p)),
            Err(_) => Err(CliError::Usage(format!(
                "--{flag} `{s}`: propensities are rational strings a/k with 0 < a <= k"
            ))),
        };
    }
    match raw {
        Some(raw) => Ok(PropensityMap::new(raw.propensities(t)?)?),
        None => Err(CliError::Usage(format!("--{flag} `{s}` is not a propensity a/k"))),
    }
}

fn write_design(path: &Path, d: &DesignResult) -> Res<()> {
    write_atomic(path, |w| Ok(d.write_csv(w)?))
}

fn design_summary(d: &DesignResult) -> Value {
    json!({
        "n": d.n(),
        "n_sampled": d.n_sampled(),
        "n_treated": d.d.iter().filter(|&&v| v == 1).count(),
        "sampling_groups": d.sampling.len(),
        "assignment_groups": d.assignment.len(),
    })
}

fn sample(a: &SampleArgs, rng: &RandomSource, inputs: &mut Vec<InputRecord>) -> Res<Outcome> {
    let raw = read_raw("input", &a.units.input, inputs)?;
    let table = load_table(&a.units, &raw, None)?;
    let n = table.n();
    let q = propensity_arg("q", &a.q, Some(&raw), n)?;
    let s = sample_stage(&table, &q, rng)?;
    let groups = s.partition.group_of(n);
    write_atomic(&a.out, |w| {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["unit_id", "T", "sampling_group", "q"])?;
        for i in 0..n {
            wtr.write_record([
                i.to_string(),
                s.x[i].to_string(),
                groups[i].map(|g| g.to_string()).unwrap_or_default(),
                q.get(i).to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    })?;
    Ok(Outcome {
        summary: json!({
            "n": n,
            "n_sampled": s.x.iter().filter(|&&v| v == 1).count(),
            "sampling_groups": s.partition.len(),
        }),
        warnings: s.warnings,
    })
}

/// Reads a file written by `sample`, returning `(T, q, sampling partition)`.
fn read_sample(raw: &RawTable, n: usize) -> Res<(Vec<u8>, PropensityMap, GroupPartition)> {
    if raw.len() != n {
        return Err(CliError::Usage(format!("sample file has {} rows, units file has {n}", raw.len())));
    }
    let ids = raw.integers("unit_id")?;
    if ids.iter().enumerate().any(|(i, &id)| i != id) {
        return Err(CliError::Domain(stratakit::Error::InvalidInput(
            "sample file rows must be in unit_id order 0..n".into(),
        )));
    }
    let t = raw.binary("T")?;
    let q = raw.propensities("q")?;
    let groups = raw.integers("sampling_group")?;
    let mut by: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &g) in groups.iter().enumerate() {
        by.entry(g).or_default().push(i);
    }
    let mut part = GroupPartition::default();
    for members in by.into_values() {
        let level = q[members[0]];
        if members.iter().any(|&i| q[i] != level) {
            return Err(CliError::Domain(stratakit::Error::InvalidInput(
                "a sampling group mixes propensity levels".into(),
            )));
        }
        let remainder = members.len() < level.den() as usize;
        part.push(members, level, remainder, 0);
    }
    Ok((t, PropensityMap::new(q)?, part))
}

fn assign(a: &AssignArgs, rng: &RandomSource, inputs: &mut Vec<InputRecord>) -> Res<Outcome> {
    let raw = read_raw("input", &a.units.input, inputs)?;
    let table = load_table(&a.units, &raw, None)?;
    let n = table.n();
    let p = propensity_arg("p", &a.p, Some(&raw), n)?;
    let (t, q, sampling, mut warnings) = match &a.sample {
        Some(path) => {
            let s = read_raw("sample", path, inputs)?;
            let (t, q, part) = read_sample(&s, n)?;
            (t, q, part, Vec::new())
        }
        None => {
            let q = PropensityMap::constant(n, Propensity::ONE);
            let s = sample_stage(&table, &q, rng)?;
            (s.x, q, s.partition, s.warnings)
        }
    };
    let r = assign_stage(&table, &t, &q, &p, a.subordinate, rng)?;
    warnings.extend(r.warnings);
    let d = DesignResult {
        t,
        d: r.x,
        sampling,
        assignment: r.partition,
        q,
        p,
        seed: rng.seed(),
        warnings: warnings.clone(),
    };
    d.validate()?;
    write_design(&a.out, &d)?;
    Ok(Outcome {
        summary: design_summary(&d),
        warnings,
    })
}

fn design(a: &DesignArgs, rng: &RandomSource, inputs: &mut Vec<InputRecord>) -> Res<Outcome> {
    let raw = read_raw("input", &a.units.input, inputs)?;
    let table = load_table(&a.units, &raw, None)?;
    let n = table.n();
    let q = propensity_arg("q", &a.q, Some(&raw), n)?;
    let p = propensity_arg("p", &a.p, Some(&raw), n)?;
    let d = stratakit::randomize::two_stage(&table, &q, &p, a.subordinate, rng)?;
    write_design(&a.out, &d)?;
    Ok(Outcome {
        summary: design_summary(&d),
        warnings: d.warnings.clone(),
    })
}

fn costs(raw: &RawTable, col: Option<&str>) -> Res<Vec<f64>> {
    Ok(match col {
        Some(c) => raw.numeric(c)?,
        None => vec![1.0; raw.len()],
    })
}

fn write_propensities(path: &Path, f: &FeasibleDesign) -> Res<()> {
    write_atomic(path, |w| {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["unit_id", "q", "p", "q_continuous", "p_continuous"])?;
        for i in 0..f.q.len() {
            wtr.write_record([
                i.to_string(),
                f.q.get(i).to_string(),
                f.p.get(i).to_string(),
                format!("{:.12}", f.q_continuous[i]),
                format!("{:.12}", f.p_continuous[i]),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    })
}

fn feasible_summary(f: &FeasibleDesign, budget: f64) -> Value {
    let levels = |m: &PropensityMap| m.levels().iter().map(|l| l.to_string()).collect::<Vec<_>>();
    json!({
        "budget": budget,
        "spent": f.spent,
        "budget_flag": f.budget_flag,
        "frozen": f.rounding.frozen.len(),
        "saturated": f.rounding.saturated,
        "q_levels": levels(&f.q),
        "p_levels": levels(&f.p),
    })
}

fn optimize(a: &OptimizeArgs, inputs: &mut Vec<InputRecord>) -> Res<Outcome> {
    let raw = read_raw("input", &a.input, inputs)?;
    let n = raw.len();
    let profile = match (a.homoskedastic, &a.sigma1_col, &a.sigma0_col) {
        (true, None, None) => VarianceProfile::homoskedastic(n),
        (false, Some(s1), Some(s0)) => VarianceProfile::new(raw.numeric(s1)?, raw.numeric(s0)?, ProfileSource::Oracle)?,
        _ => {
            return Err(CliError::Usage(
                "give either --homoskedastic or both --sigma1-col and --sigma0-col".into(),
            ))
        }
    };
    let budget = BudgetSpec::new(a.budget, costs(&raw, a.cost_col.as_deref())?)?;
    let f = feasible_optimal_design(&profile, &budget, a.kmax, a.levels, a.constant_p)?;
    write_propensities(&a.out, &f)?;
    let mut warnings = Vec::new();
    if f.budget_flag {
        warnings.push(format!("discretized design spends {:.6} against a budget of {}", f.spent, a.budget));
    }
    Ok(Outcome {
        summary: feasible_summary(&f, a.budget),
        warnings,
    })
}

fn pilot_design(a: &PilotDesignArgs, inputs: &mut Vec<InputRecord>) -> Res<Outcome> {
    let praw = read_raw("pilot", &a.pilot, inputs)?;
    let mraw = read_raw("main", &a.main, inputs)?;
    let schema = ColumnSchema {
        psi1: a.psi_cols.clone(),
        ..Default::default()
    };
    let pilot_units = UnitTable::from_raw(&praw, &schema)?;
    let main_units = UnitTable::from_raw(&mraw, &schema)?;
    let np = pilot_units.n();
    let t = if praw.has(&a.t_col) { praw.binary(&a.t_col)? } else { vec![1; np] };
    let d = praw.binary(&a.d_col)?;
    let y = praw.numeric_or_missing(&a.y_col)?;
    let q = propensity_arg("pilot-q", &a.pilot_q, Some(&praw), np)?.as_f64();
    let p = propensity_arg("pilot-p", &a.pilot_p, Some(&praw), np)?.as_f64();
    let bw = match a.bandwidth.trim() {
        "cv" => Bandwidth::CrossValidated,
        s => match s.parse::<usize>() {
            Ok(k) if k >= 1 => Bandwidth::Fixed(k),
            _ => return Err(CliError::Usage(format!("--bandwidth `{s}` must be `cv` or a positive integer"))),
        },
    };
    let pilot = PilotData::new(pilot_units.psi1, y, t, d, q, p)?;
    let profile = estimate_variance_functions(&pilot, &main_units.psi1, bw)?;
    let budget = BudgetSpec::new(a.budget, costs(&mraw, a.cost_col.as_deref())?)?;
    let f = feasible_optimal_design(&profile, &budget, a.kmax, a.levels, a.constant_p)?;
    write_propensities(&a.out, &f)?;
    let mut warnings = Vec::new();
    let nm = main_units.n();
    if (a.kmax as usize).pow(2) > nm {
        warnings.push(format!("k_max^2 = {} exceeds the main sample size {nm}", a.kmax.pow(2)));
    }
    if f.budget_flag {
        warnings.push(format!("discretized design spends {:.6} against a budget of {}", f.spent, a.budget));
    }
    Ok(Outcome {
        summary: feasible_summary(&f, a.budget),
        warnings,
    })
}

fn parse_method(s: &str) -> Res<VarianceMethod> {
    match s.trim().replace('_', "-").as_str() {
        "collapsed-strata" => Ok(VarianceMethod::CollapsedStrata),
        "complete-sampling" => Ok(VarianceMethod::CompleteSampling),
        "complete" => Ok(VarianceMethod::Complete),
        other => Err(CliError::Usage(format!(
            "--method `{other}`: expected collapsed-strata, complete-sampling or complete"
        ))),
    }
}

fn estimate(a: &EstimateArgs, inputs: &mut Vec<InputRecord>) -> Res<Outcome> {
    let method = parse_method(&a.method)?;
    inputs.push(hash_input("design", &a.design)?);
    let design = DesignResult::read_csv(std::fs::File::open(&a.design)?)?;
    let raw = read_raw("input", &a.input, inputs)?;
    let schema = ColumnSchema {
        psi1: a.psi2_cols.clone(),
        ..Default::default()
    };
    let table = UnitTable::from_raw(&raw, &schema)?;
    let table = if a.raw_covariates { table } else { standardize(&table)? };
    let n = table.n();
    if design.n() != n {
        return Err(CliError::Usage(format!("design has {} units, units file has {n}", design.n())));
    }
    let oraw = match &a.outcomes {
        Some(p) => read_raw("outcomes", p, inputs)?,
        None => raw,
    };
    let col = oraw.numeric_or_missing(&a.y_col)?;
    let mut y = vec![f64::NAN; n];
    if oraw.has("unit_id") {
        for (r, id) in oraw.integers("unit_id")?.into_iter().enumerate() {
            if id >= n {
                return Err(CliError::Domain(stratakit::Error::Parse {
                    row: r + 1,
                    column: "unit_id".into(),
                    message: format!("unit {id} is not in the design"),
                }));
            }
            y[id] = col[r];
        }
    } else if col.len() == n {
        y = col;
    } else {
        return Err(CliError::Usage("outcomes file has no unit_id column and a different row count".into()));
    }
    let report = estimate_design(&design, &y, &table.psi1, a.alpha, method)?;
    let text = serde_json::to_string_pretty(&report)? + "\n";
    write_atomic(&a.out, |w| Ok(w.write_all(text.as_bytes())?))?;
    let mut warnings = Vec::new();
    if report.flags.variance_floored {
        warnings.push("variance estimate was not positive and was floored".into());
    }
    if report.flags.remainder_heavy {
        warnings.push("more than 10% of sampled units fall in remainder groups".into());
    }
    if report.flags.subvector_warning {
        warnings.push("the design reported a stratification subvector warning".into());
    }
    Ok(Outcome {
        summary: serde_json::to_value(&report)?,
        warnings,
    })
}

fn simulate(a: &SimulateArgs, rng: &RandomSource) -> Res<Outcome> {
    let designs: Vec<DesignId> = a
        .designs
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.parse::<DesignId>().map_err(|e| CliError::Usage(format!("--designs: {e}"))))
        .collect::<Res<_>>()?;
    let spec = DgpSpec::model(a.model, a.n, a.dim)?;
    let cfg = SimConfig {
        reps: a.reps,
        alpha: a.alpha,
        k_max: a.kmax,
        l_max: a.levels,
        ..Default::default()
    };
    let table = run_design_comparison(&spec, &designs, &cfg, rng)?;
    write_atomic(&a.out, |w| Ok(table.write_csv(w)?))?;
    Ok(Outcome {
        summary: json!({ "ate": table.ate, "designs": table.rows.iter().map(|r| &r.design).collect::<Vec<_>>() }),
        warnings: Vec::new(),
    })
}

fn maxcut(a: &MaxcutArgs, rng: &RandomSource, inputs: &mut Vec<InputRecord>) -> Res<Outcome> {
    let raw = read_raw("input", &a.input, inputs)?;
    let h = raw.numeric(&a.balance_col)?;
    let mode = if a.exact {
        CutMode::Exact
    } else {
        CutMode::Heuristic {
            restarts: a.restarts.unwrap_or(16),
        }
    };
    let r = alternating_design(&h, mode, rng)?;
    write_atomic(&a.out, |w| {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["unit_id", "d_star", "D"])?;
        for i in 0..h.len() {
            wtr.write_record([i.to_string(), r.d_star[i].to_string(), r.d[i].to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    })?;
    Ok(Outcome {
        summary: json!({ "objective": r.objective, "cut_weight": r.cut_weight }),
        warnings: Vec::new(),
    })
}

#[derive(Serialize)]
struct MatchSummary {
    groups: usize,
    remainder: usize,
    objective: f64,
}

fn match_units(a: &MatchArgs, inputs: &mut Vec<InputRecord>) -> Res<Outcome> {
    let raw = read_raw("input", &a.input, inputs)?;
    let table = UnitTable::from_raw(&raw, &ColumnSchema { psi1: a.psi1_cols.clone(), ..Default::default() })?;
    let table = if a.raw_covariates { table } else { standardize(&table)? };
    let k = u32::try_from(a.k).ok().filter(|&k| k >= 1).ok_or_else(|| CliError::Usage("--k must be a positive integer".into()))?;
    let tuples = if a.folds > 1 {
        match_within_folds(&table.psi1, a.k, a.folds, true)?
    } else {
        build_k_tuples(&table.psi1, a.k)?
    };
    let level = Propensity::new(1, k)?;
    let mut part = GroupPartition::default();
    for g in &tuples.groups {
        part.push(g.clone(), level, false, 0);
    }
    if !tuples.remainder.is_empty() {
        part.push(tuples.remainder.clone(), level, true, 0);
    }
    write_atomic(&a.out, |w| Ok(part.write_csv(w)?))?;
    Ok(Outcome {
        summary: serde_json::to_value(MatchSummary {
            groups: tuples.groups.len(),
            remainder: tuples.remainder.len(),
            objective: tuples.objective,
        })?,
        warnings: Vec::new(),
    })
}
