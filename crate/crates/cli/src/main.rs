//! `distmatch`: train, certify and report characteristic-function matching runs.

mod config;
mod io;
mod oracle;
mod report;
mod train;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{ConfigError, Overrides, Scale};

#[derive(Parser, Debug)]
#[command(name = "distmatch", version, about = "Match the law of a controlled return to a target distribution")]
struct Cli {
    /// Override the seed of the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for simulation.
    #[arg(long, global = true, env = "DISTMATCH_THREADS")]
    threads: Option<usize>,
    /// Desk-sized runs or the full published settings.
    #[arg(long, global = true, value_enum)]
    scale: Option<Scale>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a policy from a run configuration.
    Train {
        config: PathBuf,
        /// Output directory (overrides `outputs.dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve an analytic oracle (Jacobi–Anger modes or torus deconvolution).
    Oracle {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an invariant suite: gradients, bias, epps, bernoulli, oracle-roundtrip, all.
    Verify { suite: String },
    /// Summarize a finished run directory.
    Report { run_dir: PathBuf },
}

/// Every way a command can end other than success.
#[derive(Debug)]
pub enum Failure {
    Config(ConfigError),
    Runtime(String),
    Stalled(String),
    Infeasible(String),
    /// A verification check did not pass; details were already printed.
    Checks(usize),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Runtime(_) | Failure::Checks(_) => 2,
            Failure::Stalled(_) => 3,
            Failure::Infeasible(_) => 4,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(e) => write!(f, "configuration error: {e}"),
            Failure::Runtime(m) => write!(f, "runtime error: {m}"),
            Failure::Stalled(m) => write!(f, "stalled: {m}"),
            Failure::Infeasible(m) => write!(f, "infeasible target: {m}"),
            Failure::Checks(n) => write!(f, "{n} check(s) failed"),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<distmatch_core::Error> for Failure {
    fn from(e: distmatch_core::Error) -> Self {
        match e {
            distmatch_core::Error::InfeasibleTarget { .. } => Failure::Infeasible(e.to_string()),
            e => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("configuration error: `--threads` must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("runtime error: {e}");
            return ExitCode::from(2);
        }
    }
    let overrides = |out: &Option<PathBuf>| Overrides {
        seed: cli.seed,
        scale: cli.scale,
        out: out.clone(),
    };
    let result = match &cli.command {
        Command::Train { config, out } => train::run(config, &overrides(out)),
        Command::Oracle { config, out } => oracle::run(config, &overrides(out)),
        Command::Verify { suite } => verify::run(suite, cli.seed.unwrap_or(0)),
        Command::Report { run_dir } => report::run(run_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{f}");
            ExitCode::from(f.code())
        }
    }
}
