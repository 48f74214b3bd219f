//! `lql`: reproducible experiment runs for the lattice LQG geodesic
//! laboratory.
//!
//! Pipeline: `sample` -> `geodesic` -> `decompose` -> `empirical` ->
//! `diagnose`, then `report` to render the outcome. Every stage writes its
//! files into the output directory and lists them in `manifest.json` with
//! checksums. All randomness derives from `base_seed`, so identical
//! configurations produce identical bytes. `LQL_WORKERS` caps the worker
//! pool.

mod config;
mod error;
mod pipeline;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::ExperimentConfig;
use error::CliError;

#[derive(Parser)]
#[command(name = "lql", about = "Lattice LQG geodesic laboratory", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct StageArgs {
    /// Configuration file (flat `key = value` lines); defaults apply when
    /// omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Override n_replicates from the configuration.
    #[arg(long)]
    replicates: Option<usize>,
    /// Override base_seed from the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample replicate fields.
    Sample(StageArgs),
    /// Detect coalescence and trace the origin geodesic.
    Geodesic(StageArgs),
    /// Decompose traced geodesics into renewal segments.
    Decompose(StageArgs),
    /// Draw rooted empirical samples and size-biased draws.
    Empirical(StageArgs),
    /// Compute the diagnostic report.
    Diagnose(StageArgs),
    /// Render the report table; exit 1 when any entry failed.
    Report {
        /// Run directory holding diagnostics.json.
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(args: &StageArgs) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(r) = args.replicates {
        if r == 0 {
            return Err(CliError::Config("replicate override must be >= 1".into()));
        }
        cfg.n_replicates = r;
    }
    if let Some(s) = args.seed {
        cfg.base_seed = s;
    }
    Ok(cfg)
}

fn init_workers() {
    if let Ok(v) = std::env::var("LQL_WORKERS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
        }
    }
}

fn run() -> Result<i32, CliError> {
    let cli = Cli::parse();
    init_workers();
    match cli.command {
        Command::Sample(args) => pipeline::stage_sample(&load_config(&args)?, &args.out)?,
        Command::Geodesic(args) => pipeline::stage_geodesic(&load_config(&args)?, &args.out)?,
        Command::Decompose(args) => pipeline::stage_decompose(&load_config(&args)?, &args.out)?,
        Command::Empirical(args) => pipeline::stage_empirical(&load_config(&args)?, &args.out)?,
        Command::Diagnose(args) => pipeline::stage_diagnose(&load_config(&args)?, &args.out)?,
        Command::Report { out } => {
            let all_pass = report::render(&out)?;
            return Ok(if all_pass { 0 } else { 1 });
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("lql: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
