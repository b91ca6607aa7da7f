//! `relprop`: train a cover classifier, explain its decisions with α–β
//! relevance propagation, and aggregate relevance over detection boxes.

mod aggregate;
mod config;
mod explain;
mod output;
mod report;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{ConfigFile, UsageError};

#[derive(Parser)]
#[command(name = "relprop", version, about)]
struct Cli {
    /// TOML file with one table per command (`[train]`, `[explain]`, ...).
    /// Keys are the long flag names; flags given on the command line win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a one-vs-others classifier for one genre.
    Train(train::TrainArgs),
    /// Classify one image.
    Predict(explain::PredictArgs),
    /// Write the relevance map and heatmap for one image.
    Explain(explain::ExplainArgs),
    /// Sum relevance inside detection boxes into a records CSV.
    Aggregate(aggregate::AggregateArgs),
    /// Mean relevance matrix and distribution summaries from records.
    Report(report::ReportArgs),
}

/// Numeric precision for training and explanation, from `RELPROP_PRECISION`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    fn from_env() -> Result<Self, UsageError> {
        match std::env::var("RELPROP_PRECISION") {
            Err(_) => Ok(Precision::F32),
            Ok(v) => match v.as_str() {
                "" | "f32" => Ok(Precision::F32),
                "f64" => Ok(Precision::F64),
                other => Err(UsageError(format!("RELPROP_PRECISION must be f32 or f64, got '{other}'"))),
            },
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(UsageError("--jobs must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let file = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let precision = Precision::from_env()?;
    match cli.command {
        Command::Train(args) => train::run(args.merge(file.train), precision),
        Command::Predict(args) => explain::predict(args.merge(file.predict), precision),
        Command::Explain(args) => explain::run(args.merge(file.explain), precision),
        Command::Aggregate(args) => aggregate::run(args.merge(file.aggregate)),
        Command::Report(args) => report::run(args.merge(file.report)),
    }
}

/// 2 usage/config, 3 I/O or unreadable input, 4 capacity or degenerate data.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() || cause.is::<toml::de::Error>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<relprop::Error>() {
            return match e {
                relprop::Error::InvalidArgument(_) => 2,
                relprop::Error::Capacity(_) | relprop::Error::DegenerateBox(_) => 4,
                _ => 3,
            };
        }
        if cause.is::<std::io::Error>() {
            return 3;
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
