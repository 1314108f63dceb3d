//! Batch command-line front end: wires TOML run configurations to scene
//! generation, matcher training, evaluation, robustness sweeps, lift-strategy
//! comparison, and communication cost reports.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// CLI failure classes, mapped to process exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Invalid configuration or arguments (exit 2).
    Config(String),
    /// Filesystem failure (exit 3).
    Io(String),
    /// Training diverged (exit 4).
    Divergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Divergence(_) => 4,
        }
    }

    /// Single-line machine-parseable rendering: `error: <kind>: <details>`.
    pub fn single_line(&self) -> String {
        let (kind, msg) = match self {
            CliError::Config(m) => ("config", m),
            CliError::Io(m) => ("io", m),
            CliError::Divergence(m) => ("divergence", m),
        };
        format!("error: {kind}: {}", msg.replace('\n', "; "))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.single_line())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "coopsense",
    version,
    about = "Sparse cooperative perception toolkit: synthetic scenes, query matchers, robustness sweeps"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML run configuration (defaults are used when omitted).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config leaf: --set scene.n_objects=50 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory (default: runs/<subcommand>).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for sweeps (0 = library default).
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate scene files (objects, agents, per-agent queries).
    GenScenes(CommonArgs),
    /// Train the context-aware matcher; writes parameters and a loss curve.
    Train(CommonArgs),
    /// Evaluate all configured matchers on held-out scenes.
    Eval(CommonArgs),
    /// Localization-noise robustness sweep over all configured matchers.
    SweepNoise(CommonArgs),
    /// Compare height-derived vs direct-depth lifting by range bucket.
    CompareLift(CommonArgs),
    /// Dense-vs-sparse communication cost model report.
    CostReport(CommonArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenScenes(_) => "gen-scenes",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::SweepNoise(_) => "sweep-noise",
            Command::CompareLift(_) => "compare-lift",
            Command::CostReport(_) => "cost-report",
        }
    }

    pub fn args(&self) -> &CommonArgs {
        match self {
            Command::GenScenes(a)
            | Command::Train(a)
            | Command::Eval(a)
            | Command::SweepNoise(a)
            | Command::CompareLift(a)
            | Command::CostReport(a) => a,
        }
    }
}

/// Parse arguments and run; returns the process exit code.
pub fn run_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprint!("{e}");
            return 2;
        }
    };
    match commands::run(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.single_line());
            e.exit_code()
        }
    }
}
