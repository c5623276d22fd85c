mod commands;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use meanfield_core::ErrorKind;

/// Mean-field, mean-drift, exact and simulated analyses of Markov
/// population processes. Every command writes CSV to standard output (or
/// --out) and diagnostics to standard error.
#[derive(Debug, Parser)]
#[command(name = "meanfield", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check rates for finiteness and sign and estimate the drift's Lipschitz constant and bound
    Validate(ValidateArgs),
    /// Drift F^(N)(m), or the limit drift when --N is omitted
    Drift(DriftArgs),
    /// Poisson-averaged mean drift at population size N
    Meandrift(MeandriftArgs),
    /// Integrate the drift, mean-drift or limit ODE
    Ode(OdeArgs),
    /// Transient distribution of the lumped chain by uniformization
    Exact(ExactArgs),
    /// Ensemble of stochastic simulations
    Simulate(SimulateArgs),
    /// Sweep over N comparing drift ODE, mean-drift ODE, exact chain and simulation
    Compare(CompareArgs),
    /// Distance of one state's count distribution to Poisson and binomial laws
    Chaos(ChaosArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Model file; the built-in saturated-channel model when omitted
    #[arg(long)]
    model: Option<PathBuf>,
    /// Write the CSV to this file instead of standard output
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[command(flatten)]
    common: Common,
    /// Population size
    #[arg(long = "N", default_value_t = 100)]
    n: u64,
    /// Number of sampled simplex pairs
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    /// Seed of the sampling sequence
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Debug, Args)]
struct DriftArgs {
    #[command(flatten)]
    common: Common,
    /// Population size; omit for the limit drift
    #[arg(long = "N")]
    n: Option<u64>,
    /// Occupancy measure, comma-separated
    #[arg(long)]
    m: String,
    /// Limit drift source: declared or numeric (default: declared when the model has limit rates)
    #[arg(long)]
    limit: Option<String>,
    /// Print one intensity per transition instead of the drift vector
    #[arg(long)]
    full: bool,
}

#[derive(Debug, Args)]
struct MeandriftArgs {
    #[command(flatten)]
    common: Common,
    /// Population size
    #[arg(long = "N")]
    n: u64,
    /// Occupancy measure, comma-separated
    #[arg(long)]
    m: String,
    /// Poisson tail tolerance
    #[arg(long, default_value_t = meanfield_core::meandrift::DEFAULT_TOLERANCE)]
    tol: f64,
    /// Print one mean intensity per transition instead of the mean drift vector
    #[arg(long)]
    full: bool,
}

#[derive(Debug, Args)]
struct OdeArgs {
    #[command(flatten)]
    common: Common,
    /// Right-hand side: drift, meandrift or limit
    #[arg(long, default_value = "drift")]
    variant: String,
    /// Population size (drift and meandrift)
    #[arg(long = "N")]
    n: Option<u64>,
    /// Initial occupancy; all agents in the first state when omitted
    #[arg(long)]
    init: Option<String>,
    /// End time
    #[arg(long)]
    t: f64,
    /// Runge-Kutta step (default min(0.1, t/1000))
    #[arg(long)]
    step: Option<f64>,
    /// Poisson tail tolerance for the meandrift variant
    #[arg(long, default_value_t = meanfield_core::meandrift::DEFAULT_TOLERANCE)]
    tol: f64,
    /// Limit drift source for the limit variant: declared or numeric
    #[arg(long)]
    limit: Option<String>,
    /// Output times, comma-separated
    #[arg(long)]
    times: Option<String>,
    /// Number of equally spaced output times when --times is absent
    #[arg(long, default_value_t = 101)]
    points: usize,
    /// Output every integration step
    #[arg(long)]
    full: bool,
}

#[derive(Debug, Args)]
struct ExactArgs {
    #[command(flatten)]
    common: Common,
    /// Population size
    #[arg(long = "N")]
    n: u64,
    /// Initial occupancy, rounded to the nearest lattice point
    #[arg(long)]
    init: Option<String>,
    /// End time
    #[arg(long)]
    t: f64,
    /// Truncation error of the uniformization series
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
    /// Output times, comma-separated (default: t only)
    #[arg(long)]
    times: Option<String>,
    /// Largest lumped state space to enumerate
    #[arg(long, default_value_t = meanfield_core::exact::DEFAULT_STATE_CAP)]
    cap: usize,
    /// Append the full distribution at t
    #[arg(long)]
    full: bool,
}

#[derive(Debug, Args)]
struct SimArgs {
    /// Replications
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    /// Master seed
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// ctmc or slotted:<D>
    #[arg(long, default_value = "ctmc")]
    mode: String,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// Population size
    #[arg(long = "N")]
    n: u64,
    /// Initial occupancy, rounded to the nearest lattice point
    #[arg(long)]
    init: Option<String>,
    /// End time
    #[arg(long)]
    t: f64,
    #[command(flatten)]
    sim: SimArgs,
    /// Sample times, comma-separated
    #[arg(long)]
    times: Option<String>,
    /// Number of equally spaced sample times when --times is absent
    #[arg(long, default_value_t = meanfield_core::sim::DEFAULT_GRID_POINTS)]
    points: usize,
    /// Histogram of the count in a state at a time, as `t,state`; repeatable
    #[arg(long)]
    hist: Vec<String>,
    /// Reference trajectory CSV (t,phi_1,...) for sup-distance statistics
    #[arg(long = "ref")]
    reference: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[command(flatten)]
    common: Common,
    /// Population sizes, comma-separated
    #[arg(long = "Ns")]
    ns: String,
    /// Comparison time
    #[arg(long, default_value_t = 1000.0)]
    t: f64,
    /// Initial occupancy
    #[arg(long)]
    init: Option<String>,
    /// Reported state, by name or 1-based index
    #[arg(long, default_value = "2")]
    state: String,
    /// Poisson tail tolerance of the mean drift
    #[arg(long, default_value_t = meanfield_core::meandrift::DEFAULT_TOLERANCE)]
    tol: f64,
    /// Runge-Kutta step
    #[arg(long)]
    step: Option<f64>,
    /// Largest lumped state space solved exactly
    #[arg(long, default_value_t = meanfield_core::exact::DEFAULT_STATE_CAP)]
    cap: usize,
    /// Add a simulation column with this many replications
    #[arg(long)]
    reps: Option<usize>,
    /// Master seed of the simulation column
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Simulation mode: ctmc or slotted:<D>
    #[arg(long, default_value = "ctmc")]
    mode: String,
}

#[derive(Debug, Args)]
struct ChaosArgs {
    #[command(flatten)]
    common: Common,
    /// Population sizes, comma-separated
    #[arg(long = "Ns", default_value = "10,100")]
    ns: String,
    /// Observation time
    #[arg(long, default_value_t = 200.0)]
    t: f64,
    /// Initial occupancy
    #[arg(long)]
    init: Option<String>,
    /// Observed state, by name or 1-based index
    #[arg(long, default_value = "2")]
    state: String,
    /// Deterministic occupancy used for the Poisson mean: drift or meandrift
    #[arg(long, default_value = "meandrift")]
    variant: String,
    /// Poisson tail tolerance of the mean drift
    #[arg(long, default_value_t = meanfield_core::meandrift::DEFAULT_TOLERANCE)]
    tol: f64,
    #[command(flatten)]
    sim: SimArgs,
}

/// A failure reported as `error: <tag>: <detail>` with an exit status
/// picked from its kind.
#[derive(Debug)]
pub struct Failure {
    kind: ErrorKind,
    tag: &'static str,
    detail: String,
}

impl Failure {
    pub fn usage(detail: impl Into<String>) -> Self {
        Failure {
            kind: ErrorKind::Usage,
            tag: "usage",
            detail: detail.into(),
        }
    }

    fn exit_code(&self) -> u8 {
        match self.kind {
            ErrorKind::Usage => 1,
            ErrorKind::Model => 2,
            ErrorKind::Numerical => 3,
        }
    }
}

impl From<meanfield_core::Error> for Failure {
    fn from(e: meanfield_core::Error) -> Self {
        Failure {
            kind: e.kind(),
            tag: e.tag(),
            detail: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind as ClapKind;
            if matches!(e.kind(), ClapKind::DisplayHelp | ClapKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let message = e.to_string();
            let detail: Vec<&str> = message
                .lines()
                .map(str::trim)
                .take_while(|l| !l.starts_with("Usage:"))
                .filter(|l| !l.is_empty())
                .collect();
            let detail = detail.join(" ");
            eprintln!("error: usage: {}", detail.strip_prefix("error: ").unwrap_or(&detail));
            return ExitCode::from(1);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}: {}", f.tag, f.detail.replace('\n', " "));
            ExitCode::from(f.exit_code())
        }
    }
}
