//! Command-line harness: `run`, `sweep-gamma`, `compare` and `rerun`.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 invalid spec, 3 divergence.

pub mod artifacts;
pub mod commands;
pub mod spec;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::Error;
use crate::problems::ProblemKind;

pub use artifacts::{Status, Summary, CSV_HEADER, HISTORY_FILE, SUMMARY_FILE};
pub use commands::{cmd_compare, cmd_rerun, cmd_run, cmd_sweep_gamma, execute, CompareReport, RunResult, SweepReport};
pub use spec::{BoxSpec, MethodName, ReferenceSpec, RunSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "kinv", version, about = "Derivative-free Bayesian inversion experiments")]
pub struct Cli {
    /// Worker threads for parallel forward evaluations.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one method on one problem.
    Run {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Repeat a mean-field run for several values of γ.
    SweepGamma {
        #[command(flatten)]
        spec: SpecArgs,
        /// Comma-separated γ values.
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.25, 0.5, 1.0, 2.0, 3.0])]
        gammas: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge and rank artifacts (run directories or summary files).
    Compare {
        #[arg(required = true)]
        artifacts: Vec<PathBuf>,
        /// Recompute final errors against `analytic` or a fixture summary.
        #[arg(long)]
        reference: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-execute the spec embedded in a summary.
    Rerun {
        artifact: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Args)]
pub struct SpecArgs {
    #[arg(long, value_enum)]
    pub method: MethodName,
    #[arg(long)]
    pub problem: ProblemKind,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub gamma: f64,
    #[arg(long, default_value_t = 30)]
    pub iterations: usize,
    /// Ensemble size.
    #[arg(long = "J", default_value_t = 10)]
    pub ensemble_size: usize,
    /// Transport step size; `1/dt` must be an integer.
    #[arg(long, allow_hyphen_values = true)]
    pub dt: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// `none`, `analytic` or the path of a fixture summary.
    #[arg(long, default_value = "none")]
    pub reference: String,
    /// Invert in the span of this many leading prior modes.
    #[arg(long)]
    pub lowrank: Option<usize>,
    /// `positive` or `MIN:MAX`, applied to every coordinate.
    #[arg(long = "box", allow_hyphen_values = true)]
    pub box_bounds: Option<String>,
    /// Low-fidelity Darcy grid; the high-fidelity grid is `--grid`.
    #[arg(long)]
    pub bifidelity_grid: Option<usize>,
    #[arg(long, default_value_t = crate::problems::DEFAULT_DARCY_GRID)]
    pub grid: usize,
    /// Hilbert dimension or number of inverted Darcy modes.
    #[arg(long)]
    pub modes: Option<usize>,
    /// Seed of the synthetic Darcy truth and noise.
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    /// Defaults to a tenth of the samples.
    #[arg(long)]
    pub burnin: Option<usize>,
    /// RWM step (default 1.0) or pCN β (default 0.04).
    #[arg(long, allow_hyphen_values = true)]
    pub step: Option<f64>,
    /// Moment-correct the initial ensemble.
    #[arg(long)]
    pub exact_init: Option<bool>,
}

impl SpecArgs {
    pub fn to_spec(&self) -> Result<RunSpec, Error> {
        Ok(RunSpec {
            method: self.method,
            problem: self.problem,
            gamma: self.gamma,
            iterations: self.iterations,
            ensemble_size: self.ensemble_size,
            dt: self.dt,
            seed: self.seed,
            reference: self.reference.parse()?,
            lowrank: self.lowrank,
            box_bounds: self.box_bounds.as_deref().map(str::parse).transpose()?,
            bifidelity_grid: self.bifidelity_grid,
            grid: self.grid,
            modes: self.modes,
            data_seed: self.data_seed,
            samples: self.samples,
            burnin: self.burnin,
            step: self.step,
            exact_init: self.exact_init,
        })
    }
}

fn exit_code_for(e: &Error) -> i32 {
    if commands::is_invalid_spec(e) {
        EXIT_INVALID
    } else {
        EXIT_FAILURE
    }
}

fn report_run(result: &RunResult, out: &std::path::Path) -> i32 {
    let s = &result.summary;
    match s.status {
        Status::Diverged => {
            eprintln!("{}", s.failure.as_deref().unwrap_or("diverged"));
            EXIT_DIVERGED
        }
        _ => {
            print!("{} on {}: {} iterations, {} forward evaluations", s.spec.method, s.spec.problem, s.iterations, s.fwd_evals);
            if let Some(d) = s.reference_deltas {
                print!(", mean_rel_err {:.3e}, cov_rel_err {:.3e}", d.mean_rel_err, d.cov_rel_err);
            }
            println!(" -> {}", out.display());
            EXIT_OK
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32, Error> {
    match cli.command {
        Command::Run { spec, out } => {
            let spec = spec.to_spec()?;
            Ok(report_run(&cmd_run(&spec, &out)?, &out))
        }
        Command::Rerun { artifact, out } => Ok(report_run(&cmd_rerun(&artifact, &out)?, &out)),
        Command::SweepGamma { spec, gammas, out } => {
            let report = cmd_sweep_gamma(&spec.to_spec()?, &gammas, &out)?;
            println!("{:>8}  {:<9} final mean", "gamma", "status");
            for e in &report.entries {
                println!("{:>8}  {:<9} {:?}", e.gamma, format!("{:?}", e.status).to_lowercase(), e.final_mean);
            }
            println!("max pairwise relative mean difference: {:.3e}", report.max_pairwise_mean_rel_diff);
            let diverged = report.entries.iter().any(|e| e.status == Status::Diverged);
            Ok(if diverged { EXIT_DIVERGED } else { EXIT_OK })
        }
        Command::Compare { artifacts, reference, out } => {
            let reference = reference.as_deref().map(str::parse::<ReferenceSpec>).transpose()?;
            let report = cmd_compare(&artifacts, reference.as_ref(), out.as_deref())?;
            print!("{}", commands::render_ranking(&report));
            Ok(EXIT_OK)
        }
    }
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    let jobs = cli.jobs;
    let go = move || match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    };
    match jobs {
        Some(0) => {
            eprintln!("error: --jobs must be at least 1");
            EXIT_INVALID
        }
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(go),
            Err(e) => {
                eprintln!("error: {e}");
                EXIT_FAILURE
            }
        },
        None => go(),
    }
}
