mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ncs_core::NcsError;

/// Stability certificates for networked control systems under TOD and
/// Round-Robin scheduling.
#[derive(Debug, Parser)]
#[command(name = "ncs", version, about)]
pub struct Cli {
    /// Worker threads for rows and runs (0 = logical cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub workers: usize,

    /// Directory for outputs given without a directory part.
    #[arg(long, global = true, env = "NCS_OUT_DIR")]
    pub out_dir: Option<PathBuf>,

    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Largest certified tau_M per eta_m.
    Search(SearchArgs),
    /// Reproduce a reference table.
    Table(TableArgs),
    /// Simulate the hybrid closed loop and write a trajectory CSV.
    Simulate(SimulateArgs),
    /// Check a certificate along simulated trajectories.
    Verify(VerifyArgs),
    /// Write an LMI instance in SDPA sparse format.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    /// Seed for the randomized well-formedness probes.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Interior-point iteration cap per probe.
    #[arg(long, default_value_t = 150)]
    pub max_iter: usize,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    /// Bundled scenario name or TOML file.
    #[arg(long)]
    pub scenario: String,
    /// t1 (TOD, general N) or t2 (Round-Robin / TOD for N = 2).
    #[arg(long)]
    pub theorem: String,
    /// Comma-separated eta_m values (default: the scenario's).
    #[arg(long, value_delimiter = ',')]
    pub eta_m: Option<Vec<f64>>,
    /// Decay rate (default: the scenario's).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Drop the disturbance gain b from the conditions.
    #[arg(long, conflicts_with = "disturbance")]
    pub no_disturbance: bool,
    /// Include the disturbance gain b.
    #[arg(long)]
    pub disturbance: bool,
    /// Initial bracket as lo,hi (default eta_m + 0.001, eta_m + 0.1).
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pub bracket: Option<Vec<f64>>,
    /// Bisection tolerance.
    #[arg(long, default_value_t = 5e-4)]
    pub tol: f64,
    /// Write one witness file per row into this directory.
    #[arg(long)]
    pub witness_dir: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct TableArgs {
    /// ex1-n2, ex1-n4 or ex2.
    #[arg(long)]
    pub id: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scenario: String,
    /// tod or rr (default: the scenario's).
    #[arg(long)]
    pub protocol: Option<String>,
    /// fixed:h,eta or random:seed.
    #[arg(long, default_value = "random:0")]
    pub timing: String,
    #[arg(long, default_value_t = 5.0)]
    pub horizon: f64,
    /// Output grid spacing.
    #[arg(long, default_value_t = 1e-3)]
    pub step: f64,
    /// Override tau_M of the scenario network.
    #[arg(long)]
    pub tau_m: Option<f64>,
    /// Polytope vertex to simulate (1-based).
    #[arg(long, default_value_t = 1)]
    pub vertex: usize,
    /// Initial state, comma-separated (default: all ones).
    #[arg(long, value_delimiter = ',')]
    pub x0: Option<Vec<f64>>,
    /// Bound on a random piecewise-constant disturbance (0 = none).
    #[arg(long, default_value_t = 0.0)]
    pub delta: f64,
    /// Seed of the disturbance.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub scenario: String,
    /// Witness file written by `search --witness-dir`.
    #[arg(long)]
    pub witness: PathBuf,
    /// tod-n, n2 or rr-n.
    #[arg(long)]
    pub variant: String,
    /// tod or rr (default: tod for tod-n, rr for rr-n, the scenario's for n2).
    #[arg(long)]
    pub protocol: Option<String>,
    #[arg(long, default_value_t = 10)]
    pub runs: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.5)]
    pub horizon: f64,
    #[arg(long, default_value_t = 1)]
    pub vertex: usize,
    #[arg(long, default_value_t = 100)]
    pub flow_points: usize,
    /// Also check the ISS bound on a grid with this spacing (needs alpha > 0).
    #[arg(long)]
    pub iss_step: Option<f64>,
    /// Bound on a random piecewise-constant disturbance.
    #[arg(long, default_value_t = 0.0)]
    pub delta: f64,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub scenario: String,
    #[arg(long)]
    pub theorem: String,
    #[arg(long)]
    pub eta_m: Option<f64>,
    #[arg(long)]
    pub tau_m: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub disturbance: bool,
    /// Witness whose margins must survive the round trip.
    #[arg(long)]
    pub witness: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    /// A check failed or no certificate exists.
    Fail(String),
    Usage(String),
    Health(String),
    Core(NcsError),
}

impl From<NcsError> for CliError {
    fn from(e: NcsError) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(NcsError::Io(e))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Usage(format!("csv: {e}"))
    }
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Fail(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Health(_) => 3,
            CliError::Core(e) => match e {
                NcsError::NoCertificate(_) | NcsError::Bracket(_) => 1,
                NcsError::SolverHealth(_) | NcsError::NonFinite(_) | NcsError::Divergence { .. } => 3,
                _ => 2,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Fail(m) => write!(f, "FAIL: {m}"),
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Health(m) => write!(f, "numerical health: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
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
    let workers = if cli.workers == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        cli.workers
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let ctx = commands::Ctx {
        out_dir: cli.out_dir.clone(),
        pool,
    };
    let res = match &cli.command {
        Command::Search(a) => commands::search(&ctx, a),
        Command::Table(a) => commands::table(&ctx, a),
        Command::Simulate(a) => commands::simulate(&ctx, a),
        Command::Verify(a) => commands::verify(&ctx, a),
        Command::Export(a) => commands::export(&ctx, a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
