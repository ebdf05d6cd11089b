mod commands;
mod config;
mod output;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

/// Design and analysis of two-stage finely stratified experiments.
#[derive(Parser, Debug)]
#[command(name = "stratakit", version, arg_required_else_help = true)]
pub struct Cli {
    /// Master seed for every randomized command; generated and printed if absent.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// JSON file whose keys mirror the long flags; explicit flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Draw the sampling indicators T by local randomization on psi1.
    Sample(SampleArgs),
    /// Assign treatment among sampled units by local randomization on psi2.
    Assign(AssignArgs),
    /// Sample and assign in one two-stage design.
    Design(DesignArgs),
    /// Budget-constrained optimal propensities from known variance functions.
    Optimize(OptimizeArgs),
    /// Optimal propensities for a main study from pilot data.
    PilotDesign(PilotDesignArgs),
    /// Point estimate and confidence interval from a realized design.
    Estimate(EstimateArgs),
    /// Monte Carlo comparison of designs on a registered model.
    Simulate(SimulateArgs),
    /// Alternating design from a balance function.
    Maxcut(MaxcutArgs),
    /// Match units into homogeneous k-tuples.
    Match(MatchArgs),
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct UnitArgs {
    /// Units file (CSV with a header row).
    #[arg(long)]
    pub input: PathBuf,
    /// Sampling stratification columns.
    #[arg(long, value_delimiter = ',', required = true)]
    pub psi1_cols: Vec<String>,
    /// Assignment stratification columns; defaults to psi1.
    #[arg(long, value_delimiter = ',')]
    pub psi2_cols: Vec<String>,
    /// Match on the covariates as given instead of standardizing them.
    #[arg(long)]
    pub raw_covariates: bool,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct SampleArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub units: UnitArgs,
    /// Sampling propensity: a constant "a/k" or a column of "a/k" strings.
    #[arg(long)]
    pub q: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct AssignArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub units: UnitArgs,
    /// Output of `sample`; every unit counts as sampled when omitted.
    #[arg(long)]
    pub sample: Option<PathBuf>,
    /// Treatment propensity: a constant "a/k" or a column of "a/k" strings.
    #[arg(long)]
    pub p: String,
    /// Match separately inside each sampling propensity stratum.
    #[arg(long)]
    pub subordinate: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct DesignArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub units: UnitArgs,
    /// Sampling propensity: a constant "a/k" or a column of "a/k" strings.
    #[arg(long)]
    pub q: String,
    /// Treatment propensity: a constant "a/k" or a column of "a/k" strings.
    #[arg(long)]
    pub p: String,
    /// Match separately inside each sampling propensity stratum.
    #[arg(long)]
    pub subordinate: bool,
    /// Design file; the manifest goes beside it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct OptimizeArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Column of treated-arm outcome standard deviations.
    #[arg(long)]
    pub sigma1_col: Option<String>,
    /// Column of control-arm outcome standard deviations.
    #[arg(long)]
    pub sigma0_col: Option<String>,
    /// Use unit standard deviations in both arms.
    #[arg(long)]
    pub homoskedastic: bool,
    /// Column of per-unit costs; unit costs when omitted.
    #[arg(long)]
    pub cost_col: Option<String>,
    /// Average budget per eligible unit.
    #[arg(long)]
    pub budget: f64,
    #[arg(long, default_value_t = 8)]
    pub kmax: u32,
    /// Maximum number of distinct propensity levels.
    #[arg(long, default_value_t = 3)]
    pub levels: usize,
    /// Use the best constant treatment propensity.
    #[arg(long)]
    pub constant_p: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct PilotDesignArgs {
    /// Pilot file with covariates, outcomes and indicators.
    #[arg(long)]
    pub pilot: PathBuf,
    /// Main study units file.
    #[arg(long)]
    pub main: PathBuf,
    /// Covariate columns present in both files.
    #[arg(long, value_delimiter = ',', required = true)]
    pub psi_cols: Vec<String>,
    #[arg(long, default_value = "y")]
    pub y_col: String,
    /// Pilot sampling indicator column; everyone counts as sampled if absent.
    #[arg(long, default_value = "T")]
    pub t_col: String,
    #[arg(long, default_value = "D")]
    pub d_col: String,
    /// Pilot sampling propensity, constant "a/k" or a column.
    #[arg(long, default_value = "1")]
    pub pilot_q: String,
    /// Pilot treatment propensity, constant "a/k" or a column.
    #[arg(long, default_value = "1/2")]
    pub pilot_p: String,
    /// Neighbor count for the variance regressions, or "cv".
    #[arg(long, default_value = "cv")]
    pub bandwidth: String,
    #[arg(long)]
    pub cost_col: Option<String>,
    #[arg(long)]
    pub budget: f64,
    #[arg(long, default_value_t = 8)]
    pub kmax: u32,
    #[arg(long, default_value_t = 3)]
    pub levels: usize,
    #[arg(long)]
    pub constant_p: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct EstimateArgs {
    /// Design file written by `design` or `assign`.
    #[arg(long)]
    pub design: PathBuf,
    /// Units file supplying the assignment covariates.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    pub psi2_cols: Vec<String>,
    #[arg(long)]
    pub raw_covariates: bool,
    /// Outcomes file, joined on unit_id when it has one; defaults to --input.
    #[arg(long)]
    pub outcomes: Option<PathBuf>,
    #[arg(long, default_value = "y")]
    pub y_col: String,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// collapsed-strata, complete-sampling or complete.
    #[arg(long, default_value = "collapsed-strata")]
    pub method: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct SimulateArgs {
    /// Registered model, 1 to 6.
    #[arg(long)]
    pub model: u8,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    #[arg(long, default_value_t = 1000)]
    pub reps: usize,
    /// Comma-separated designs: cr, crloc, loc, hom, opt, pilot:N, pilots, pilotl.
    #[arg(long, default_value = "cr,crloc,loc")]
    pub designs: String,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 8)]
    pub kmax: u32,
    #[arg(long, default_value_t = 3)]
    pub levels: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct MaxcutArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Column holding the balance function h.
    #[arg(long)]
    pub balance_col: String,
    /// Exhaustive search (at most 24 units).
    #[arg(long, conflicts_with = "restarts")]
    pub exact: bool,
    /// Local search restarts for the heuristic solver.
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct MatchArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    pub psi1_cols: Vec<String>,
    #[arg(long)]
    pub raw_covariates: bool,
    /// Group size.
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    /// Match separately within this many principal-component folds.
    #[arg(long, default_value_t = 1)]
    pub folds: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Domain(stratakit::Error),
    Io(std::io::Error),
}

impl From<stratakit::Error> for CliError {
    fn from(e: stratakit::Error) -> Self {
        CliError::Domain(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Domain(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Domain(e.into())
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Domain(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "{e}"),
        }
    }
}

fn parse_args() -> Result<Cli, CliError> {
    let mut argv: Vec<OsString> = std::env::args_os().collect();
    let (config, sub) = config::scan(&argv);
    if let Some(path) = config {
        let extra = config::expand(path.as_ref(), sub.as_deref(), &argv)?;
        argv.extend(extra);
    }
    match Cli::try_parse_from(argv) {
        Ok(c) => Ok(c),
        Err(e) => e.exit(),
    }
}

fn main() -> ExitCode {
    let cli = match parse_args() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
