//! `distrust`: fit, tune, score and evaluate per-query distrust models.
//!
//! Exit codes: 0 success, 2 bad input data, 3 bad configuration,
//! 4 internal or output failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use distrust_core::Error;

use crate::config::Flags;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("input error: {0}")]
    Input(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Config(_) => 3,
            CliError::Internal(_) => 4,
        }
    }

    /// Wraps a failure while writing results.
    pub fn output(e: impl std::fmt::Display) -> Self {
        CliError::Internal(e.to_string())
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::KOutOfRange { .. } | Error::InvalidParams(_) => CliError::Config(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "distrust", version, about = "Per-query data distrust scoring")]
struct Cli {
    #[command(flatten)]
    flags: Flags,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a model (index plus rank lists) from a training CSV
    Preprocess {
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score every row of a query CSV, one JSON object per line
    Score {
        model: PathBuf,
        queries: PathBuf,
        /// Score from the stored surrogate estimators without the data
        #[arg(long)]
        no_data: bool,
    },
    /// Pick the outlier ratio and neighborhood size, and estimate the
    /// uncertainty ratio
    Tune {
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the surrogate estimators used by `score --no-data`
    SurrogateTrain {
        model: PathBuf,
        /// Where to write the extended model; defaults to overwriting MODEL
        #[arg(long)]
        out: Option<PathBuf>,
        /// Optional JSON report of the sample-size search
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Bucketed quality report, on the synthetic task or on external predictions
    Evaluate {
        #[arg(long)]
        out: PathBuf,
        /// Synthetic training-set size
        #[arg(long, default_value_t = 1000)]
        n: usize,
        /// Synthetic positive region: `disk` or `cat`
        #[arg(long, default_value = "disk")]
        region: String,
        /// Neighbors of the synthetic k-NN baseline; defaults to --k
        #[arg(long)]
        baseline_k: Option<usize>,
        /// Evaluate an existing model instead of the synthetic task
        #[arg(long, requires_all = ["queries", "predictions"])]
        model: Option<PathBuf>,
        #[arg(long)]
        queries: Option<PathBuf>,
        /// CSV with `row_id,prediction` and optionally `truth`
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let settings = config::Settings::resolve(&cli.flags)?;
    eprintln!("effective config: {}", settings.to_json());
    match cli.command {
        Command::Preprocess { data, out } => commands::preprocess(&settings, &data, &out),
        Command::Score {
            model,
            queries,
            no_data,
        } => commands::score(&settings, &model, &queries, no_data),
        Command::Tune { data, out } => commands::tune(&settings, &data, &out),
        Command::SurrogateTrain { model, out, report } => {
            commands::surrogate_train(&settings, &model, out.as_deref(), report.as_deref())
        }
        Command::Evaluate {
            out,
            n,
            region,
            baseline_k,
            model,
            queries,
            predictions,
        } => match (model, queries, predictions) {
            (Some(m), Some(q), Some(p)) => commands::evaluate_external(&settings, &m, &q, &p, &out),
            (None, None, None) => {
                commands::evaluate_synthetic(&settings, n, &region, baseline_k.unwrap_or(settings.k), &out)
            }
            _ => Err(CliError::Config(
                "--model, --queries and --predictions must be given together".into(),
            )),
        },
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(3) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
