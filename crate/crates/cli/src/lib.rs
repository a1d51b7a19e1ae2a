//! Experiment runner for the `rpdml` library.
//!
//! Every subcommand writes one run directory holding the resolved
//! `config.toml`, its primary outputs (model, trace, metrics JSON) and CSV
//! series for plotting. Outputs depend only on the inputs, the config and
//! the seed, so reruns are byte-identical.
//!
//! Exit codes: 0 on success, 1 on usage, I/O or parse errors, 2 when the
//! numerics fail (divergence, inner-solve failure, non-finite values).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod plots;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

pub use commands::{BacktestArgs, BenchArgs, EvalArgs, GenDataArgs, TrainArgs};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] rpdml::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_numeric() => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "rpdml",
    version,
    about = "Metric learning on the SPD manifold: data, training, evaluation and backtests"
)]
pub struct Cli {
    /// TOML file with the command's settings; flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Increase log verbosity (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic labeled dataset or asset panel.
    GenData(GenDataArgs),
    /// Learn a metric from a labeled CSV.
    Train(TrainArgs),
    /// k-NN accuracy and IC of euclidean, mahalanobis and learned metrics.
    Eval(EvalArgs),
    /// Rolling-window top-N backtest on a panel CSV.
    Backtest(BacktestArgs),
    /// Run the scalar toy problem and check the convergence bounds.
    BenchConvergence(BenchArgs),
    /// Regenerate the CSV plot series of an existing run directory.
    ExportPlots {
        /// Run directory written by another subcommand.
        #[arg(long, value_name = "DIR")]
        run: PathBuf,
    },
}

/// Parse `args` (including the program name), run the command and return
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    init_logging(cli.verbose);
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

pub fn dispatch(cli: &Cli) -> CliResult<()> {
    let file = cli.config.as_deref();
    match &cli.command {
        Command::GenData(a) => commands::gen_data(file, a),
        Command::Train(a) => commands::train(file, a),
        Command::Eval(a) => commands::eval(file, a),
        Command::Backtest(a) => commands::backtest(file, a),
        Command::BenchConvergence(a) => commands::bench_convergence(file, a),
        Command::ExportPlots { run } => plots::export(run).map(|files| {
            for f in files {
                println!("wrote {}", f.display());
            }
        }),
    }
}

pub(crate) fn write_file(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> CliResult<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

pub(crate) fn write_json<T: serde::Serialize>(dir: &Path, name: &str, value: &T) -> CliResult<PathBuf> {
    let mut text = serde_json::to_string_pretty(value).map_err(rpdml::Error::from)?;
    text.push('\n');
    write_file(dir, name, text)
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

pub(crate) fn open(path: &Path) -> CliResult<fs::File> {
    fs::File::open(path).map_err(|e| CliError::io(path, e))
}

pub(crate) fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}
