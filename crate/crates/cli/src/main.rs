//! Command-line front end for ivbounds.

mod commands;
mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ivbounds::inference::CoverageReport;
use ivbounds::solver::Direction;

use crate::config::{Config, OneOrMany};

/// Failure classes, each with its exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad input: flags, config, names, table ids, output paths. Exit 2.
    Validation(String),
    /// The computation failed or did not reproduce the reference. Exit 3.
    Compute(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Compute(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "invalid input: {m}"),
            CliError::Compute(m) => write!(f, "computation failed: {m}"),
        }
    }
}

impl From<ivbounds::Error> for CliError {
    fn from(e: ivbounds::Error) -> Self {
        use ivbounds::Error as E;
        match e {
            E::Solver(_) | E::Inference(_) | E::Quadrature { .. } | E::NoGridSurvivor(_) | E::ZeroDenominator(_) => CliError::Compute(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

const BOUNDS_SCHEMA: &str = "\
OUTPUT
  A JSON array, one object per grid point, ordered by v_dim, sigma, target,
  method, restrictions:
    {\"method\": \"cvr\", \"dgp\": \"local_departure\", \"target\": \"ate\",
     \"sigma\": 0.1, \"v_dim\": 1, \"restrictions\": \"none\",
     \"status\": \"bounded\" | \"empty\" | \"unbounded\",
     \"lower\": number | null, \"upper\": number | null}

CONFIG (TOML, every key optional; flags override it)
  [dgp]       treatment = \"local\" | \"random\", v_dim = 1 | [1, 2],
              sigma = 0.1 | [..], theta0 = [..], theta1 = [..]
  [target]    kind = \"ate\" | [..], v_lo, v_hi (glate), covariates (ate_x)
  [method]    name = \"cvr\" | [..], v_dim (assumed), refinement = [..],
              restrictions = \"r3\" | [..], or mtr, mtr_at_mean, mts,
              stochastic_monotonicity, deterministic_monotonicity = bool
  [inference] read by `mc`

EXIT CODES
  0 success, 2 invalid input, 3 solver failure";

const MC_SCHEMA: &str = "\
OUTPUT
  CSV with header
    n,sigma,v_dim,target,coverage,mean_width,failures,M,seed
  one row per (v_dim, sigma, target, n). coverage is the share of
  replications whose interval contains the population bounds; failed
  replications are counted in `failures` and left out of the share.
  A summary line per row goes to stderr.

CONFIG
  As for `bounds`, plus
  [inference] n = 1000 | [1000, 3000], replications (or M) = 200,
              seed = 1, alpha = 0.05, mu_lower, mu_upper (fixed tuning)
  The method must be cvr with one restriction set. Without
  method.refinement the partition is cut at 0.5 on every axis.

EXIT CODES
  0 success, 2 invalid input, 3 solver or inference failure";

const TABLES_HELP: &str = "\
OUTPUT
  Plain text, one line per check: `ok` or `FAIL`, the cell, the reference
  value and the computed one, then a summary line per table.

EXIT CODES
  0 every check passes, 2 unknown table id, 3 some check fails";

#[derive(Parser, Debug)]
#[command(name = "ivbounds", version, about = "Bounds on treatment effects under multidimensional unobserved heterogeneity")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Write the result here instead of stdout.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    /// Master seed for sampling and replications.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Log progress to stderr (-v info, -vv debug).
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Population bounds over a grid of designs, methods and restrictions.
    #[command(after_long_help = BOUNDS_SCHEMA)]
    Bounds(DesignArgs),
    /// Recompute reference tables and compare (ids 3 to 10, or `all`).
    #[command(after_long_help = TABLES_HELP)]
    Tables {
        #[arg(required = true)]
        ids: Vec<String>,
    },
    /// Monte Carlo coverage of the confidence intervals.
    #[command(after_long_help = MC_SCHEMA)]
    Mc {
        config: PathBuf,
        /// Sample sizes, overriding inference.n.
        #[arg(long, value_delimiter = ',')]
        n: Vec<usize>,
        /// Replications, overriding inference.replications.
        #[arg(long, short = 'M')]
        replications: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Simulate one dataset (CSV with columns y,d and the instrument components).
    Sample {
        #[command(flatten)]
        design: DesignArgs,
        #[arg(long)]
        n: usize,
    },
    /// Write the assembled linear program, optionally with a KKT report.
    Dump {
        #[command(flatten)]
        design: DesignArgs,
        #[arg(long, value_enum, default_value_t = Sense::Min)]
        direction: Sense,
        /// Solve and append status, residuals and certificate margin.
        #[arg(long)]
        kkt: bool,
        /// Build the program from a simulated sample of this size.
        #[arg(long)]
        n: Option<usize>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Sense {
    Min,
    Max,
}

#[derive(Args, Debug)]
struct DesignArgs {
    /// TOML config; flags override its values.
    config: Option<PathBuf>,
    /// Methods: cvr, mst, manski, hv (comma separated).
    #[arg(long, value_delimiter = ',')]
    method: Vec<String>,
    /// Target (repeatable): ate, att, atu, prte, y0, y1, sel_bias, sel_gain, glate:lo:hi, ate_x:i,j.
    #[arg(long)]
    target: Vec<String>,
    /// Treatment model: local or random.
    #[arg(long)]
    dgp: Option<String>,
    /// Dimension of the unobservable in the DGP (comma separated).
    #[arg(long, value_delimiter = ',')]
    vdim: Vec<usize>,
    /// Dimension assumed by the bounds (defaults to the DGP's).
    #[arg(long)]
    assumed_vdim: Option<usize>,
    /// Noise scales (comma separated).
    #[arg(long, value_delimiter = ',')]
    sigma: Vec<f64>,
    /// Restriction set (repeatable): none, r1, r2, r3, or a comma list of
    /// mtr, mtr_mean, mts, stochastic, deterministic.
    #[arg(long)]
    restrictions: Vec<String>,
    /// Extra partition knots (comma separated).
    #[arg(long, value_delimiter = ',')]
    refine: Vec<f64>,
}

impl DesignArgs {
    fn config(&self) -> Result<Config, CliError> {
        let mut c = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        let many = |v: &[String]| Some(OneOrMany::Many(v.to_vec()));
        if !self.method.is_empty() {
            c.method.name = many(&self.method);
        }
        if !self.target.is_empty() {
            c.target.kind = many(&self.target);
        }
        if !self.restrictions.is_empty() {
            c.method.restrictions = many(&self.restrictions);
        }
        if let Some(d) = &self.dgp {
            c.dgp.treatment = Some(d.clone());
        }
        if !self.vdim.is_empty() {
            c.dgp.v_dim = Some(OneOrMany::Many(self.vdim.clone()));
        }
        if !self.sigma.is_empty() {
            c.dgp.sigma = Some(OneOrMany::Many(self.sigma.clone()));
        }
        if let Some(k) = self.assumed_vdim {
            c.method.v_dim = Some(k);
        }
        if !self.refine.is_empty() {
            c.method.refinement = Some(self.refine.clone());
        }
        Ok(c)
    }
}

fn emit(output: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    let res = match output {
        Some(p) => std::fs::write(p, bytes).map_err(|e| format!("{}: {e}", p.display())),
        None => std::io::stdout().write_all(bytes).map_err(|e| e.to_string()),
    };
    res.map_err(CliError::Validation)
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(j) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(j).build_global().map_err(|e| CliError::Validation(e.to_string()))?;
    }
    let output = cli.output.as_deref();
    match cli.command {
        Command::Bounds(args) => {
            let records = commands::bounds(&args.config()?)?;
            let mut json = serde_json::to_vec_pretty(&records).expect("records serialize");
            json.push(b'\n');
            emit(output, &json)
        }
        Command::Tables { ids } => {
            let (text, pass) = commands::tables(&ids)?;
            emit(output, text.as_bytes())?;
            if pass {
                Ok(())
            } else {
                Err(CliError::Compute("some table checks fail".into()))
            }
        }
        Command::Mc { config, n, replications, alpha } => {
            let mut cfg = Config::load(&config)?;
            if !n.is_empty() {
                cfg.inference.n = Some(OneOrMany::Many(n));
            }
            if replications.is_some() {
                cfg.inference.replications = replications;
            }
            if alpha.is_some() {
                cfg.inference.alpha = alpha;
            }
            let seed = cli.seed.or(cfg.inference.seed).unwrap_or(1);
            let reports = commands::mc(&cfg, seed)?;
            for r in &reports {
                eprintln!(
                    "n={} sigma={} v_dim={} target={}: coverage {:.3}, mean width {:.4}, {} of {} replications failed",
                    r.n, r.sigma, r.v_dim, r.target, r.coverage, r.mean_width, r.failures, r.m
                );
            }
            let mut csv = Vec::new();
            CoverageReport::write_csv(&reports, &mut csv)?;
            emit(output, &csv)
        }
        Command::Sample { design, n } => {
            let cfg = design.config()?;
            emit(output, &commands::sample_csv(&cfg, n, cli.seed.unwrap_or(1))?)
        }
        Command::Dump { design, direction, kkt, n } => {
            let cfg = design.config()?;
            let dir = match direction {
                Sense::Min => Direction::Min,
                Sense::Max => Direction::Max,
            };
            emit(output, &commands::dump(&cfg, dir, kkt, n, cli.seed.unwrap_or(1))?)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ivbounds: {e}");
            ExitCode::from(e.code())
        }
    }
}
