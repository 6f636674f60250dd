//! `rpn`: train, evaluate and check reconciled polynomial networks.
//!
//! Exit codes: 0 success, 1 a check failed, 2 bad config, usage, input
//! file or domain error, 3 training hit a non-finite loss.

mod bench;
mod checks;
mod config;
mod run;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::ConfigError;

pub const THREADS_ENV: &str = "RPN_THREADS";

#[derive(Parser)]
#[command(name = "rpn", version, about = "Reconciled polynomial network toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed (and fold) of a run config and write reports.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Run this seed only, instead of the config's seed list.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; overrides the config's `out`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a saved checkpoint on the train and test split it was fit on.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Finite-difference gradient check over every expansion,
    /// reconciliation and remainder kind, or over one config's model.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-6)]
        h: f64,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
        /// Perturb the analytic gradient; the check must then fail.
        #[arg(long)]
        corrupt: bool,
        /// Write a per-triple CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare a unified configuration against its reference model.
    Equiv {
        /// mlp, kan, kernel, ksvm, nb or all.
        #[arg(long)]
        target: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Parameter-count and timing sweeps.
    Bench {
        /// recon, taylor, inner or all.
        #[arg(long)]
        sweep: String,
        /// Write one CSV per sweep here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample a catalog function to CSV.
    GenData {
        #[arg(long)]
        function: Option<String>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Print the catalog and exit.
        #[arg(long)]
        list: bool,
    },
}

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Run(rpn::Error),
    Usage(String),
    /// A check ran to completion and did not pass.
    Failed(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Run(rpn::Error::NonFinite { .. }) => 3,
            CliError::Config(_) | CliError::Run(_) | CliError::Usage(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "config error: {e}"),
            CliError::Run(e) => write!(f, "{e}"),
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Failed(m) => write!(f, "check failed: {m}"),
        }
    }
}

impl From<rpn::Error> for CliError {
    fn from(e: rpn::Error) -> Self {
        CliError::Run(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Run(e.into())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

fn init_threads() -> Result<usize, CliError> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    Ok(rayon::current_num_threads())
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let threads = init_threads()?;
    match cli.command {
        Command::Train { config, seed, out } => run::train(&config, seed, out, threads),
        Command::Eval { config, checkpoint } => run::eval(&config, &checkpoint),
        Command::Gradcheck {
            config,
            seed,
            h,
            tol,
            corrupt,
            out,
        } => checks::gradcheck(config.as_deref(), seed, h, tol, corrupt, out.as_deref()),
        Command::Equiv { target, seed } => checks::equiv(&target, seed),
        Command::Bench { sweep, out } => bench::run(&sweep, out.as_deref()),
        Command::GenData {
            function,
            n,
            out,
            seed,
            list,
        } => checks::gen_data(function, n, out, seed, list),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rpn: {e}");
            ExitCode::from(e.code())
        }
    }
}
