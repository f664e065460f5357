//! Reproducible experiment runner: synthetic data, OBD ingestion, pipeline
//! fitting, evaluation, ratio sweeps and EM diagnostics.
//!
//! Every command writes its outputs (with the configuration hash and the
//! seeds used) under `--out`, and maps failures onto exit codes: 2 for bad
//! configuration, 3 for bad data, 4 for numerical failure.

pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::Context;
use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "svtn", version, about = "Set-valued transformer network experiments")]
pub struct Cli {
    /// JSON run configuration; defaults apply to omitted keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed, overriding the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Suppress progress on stderr.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic micro-trip dataset.
    Generate,
    /// Window an OBD CSV file into labelled micro-trips.
    Ingest {
        csv: PathBuf,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Split a dataset and fit the configured pipeline.
    Fit {
        /// Micro-trip JSON-lines file; otherwise the configured dataset or generator.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Score a fitted pipeline, by default on its held-out split.
    Eval {
        fitted: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Repeated-trial sweep over imbalance ratios and variants.
    Sweep,
    /// Contraction estimate and convergence bound of a fitted EM run.
    Diagnose {
        fitted: PathBuf,
        /// Also run the consistency experiment.
        #[arg(long)]
        consistency: bool,
    },
}

const DEFAULT_OUT: &str = "svtn-out";

pub fn run(cli: Cli) -> Result<(), CliError> {
    let base = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let (config, seeds) = base.resolve(cli.seed)?;
    let out = match (&cli.out, &cli.command) {
        (Some(o), _) => o.clone(),
        (None, Command::Eval { fitted, .. } | Command::Diagnose { fitted, .. }) => fitted.clone(),
        (None, _) => PathBuf::from(DEFAULT_OUT),
    };
    let ctx = Context {
        config_hash: config.hash(),
        config,
        seeds,
        out,
        quiet: cli.quiet,
    };
    match &cli.command {
        Command::Generate => commands::generate(&ctx),
        Command::Ingest { csv, window, stride } => {
            let w = window.unwrap_or(ctx.config.ingest.window);
            let s = stride.or(ctx.config.ingest.stride).unwrap_or(w);
            if w == 0 || s == 0 {
                return Err(CliError::Config("window and stride must be positive".into()));
            }
            commands::ingest(&ctx, csv, w, s)
        }
        Command::Fit { data } => commands::fit(&ctx, data.as_deref()),
        Command::Eval { fitted, data } => commands::eval(&ctx, fitted, data.as_deref()),
        Command::Sweep => commands::sweep(&ctx),
        Command::Diagnose { fitted, consistency } => commands::diagnose(&ctx, fitted, *consistency),
    }
}

/// Parses `args` and runs, returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
