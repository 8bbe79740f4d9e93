//! `patternkit` command-line front end. [`run`] parses arguments, applies the
//! `PATTERNKIT_THREADS` worker cap and dispatches to one of four commands.
//! Exit codes: 0 success, 1 runtime failure, 2 invalid configuration or input.

mod commands;
mod config;
mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{FitConfig, Metadata};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_INVALID: i32 = 2;

pub const THREADS_ENV: &str = "PATTERNKIT_THREADS";

#[derive(Debug, Parser)]
#[command(name = "patternkit", version, about = "Prediction with missing predictors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the Monte Carlo comparison described by a JSON config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Override the replicate count.
        #[arg(long)]
        reps: Option<usize>,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a predictor to a CSV and save it as JSON.
    Fit {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        response: String,
        /// pmks, ccs, complete-case, mi or mimi.
        #[arg(long)]
        method: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        model_out: PathBuf,
    },
    /// Predict every row of a CSV with a saved model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "NA")]
        na_token: String,
    },
    /// Pattern-stratified k-fold cross-validation.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        response: String,
        #[arg(long)]
        method: String,
        #[arg(long)]
        folds: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Failure of a command, carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn invalid(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INVALID,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_RUNTIME,
            message: message.into(),
        }
    }
}

impl From<patternkit_core::Error> for Failure {
    fn from(e: patternkit_core::Error) -> Self {
        use patternkit_core::Error as E;
        let code = match e {
            E::Parse { .. }
            | E::Csv { .. }
            | E::MissingResponse { .. }
            | E::UnknownColumn(_)
            | E::TooManyColumns(_)
            | E::Config(_)
            | E::Json(_)
            | E::NotPositiveDefinite
            | E::Calibration(_)
            | E::ResponseRequired(_)
            | E::SelectionOnly(_) => EXIT_INVALID,
            _ => EXIT_RUNTIME,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

/// Parse `args` (program name first) and run the command. Messages go to
/// stderr; the return value is the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match with_thread_cap(|| dispatch(cli.command)) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn with_thread_cap(f: impl FnOnce() -> Result<(), Failure> + Send) -> Result<(), Failure> {
    let Some(raw) = std::env::var_os(THREADS_ENV) else {
        return f();
    };
    let threads: usize = raw
        .to_str()
        .and_then(|s| s.trim().parse().ok())
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::invalid(format!("{THREADS_ENV} must be a positive integer")))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Failure::runtime(format!("cannot start worker pool: {e}")))?;
    pool.install(f)
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Simulate {
            config,
            reps,
            seed,
            out,
        } => commands::simulate(&config, reps, seed, &out),
        Command::Fit {
            train,
            response,
            method,
            config,
            model_out,
        } => commands::fit(&train, &response, &method, config.as_deref(), &model_out),
        Command::Predict {
            model,
            input,
            out,
            seed,
            na_token,
        } => commands::predict(&model, &input, &out, seed, &na_token),
        Command::Evaluate {
            data,
            response,
            method,
            folds,
            seed,
            config,
            out,
        } => commands::evaluate(&data, &response, &method, folds, seed, config.as_deref(), &out),
    }
}
