use std::path::PathBuf;
use std::process::ExitCode;

use abp_cli::{cmd_classify, cmd_evaluate, cmd_fit, cmd_simulate, exit_code_for, RunConfig};
use anyhow::Result;
use clap::{Args, Parser, Subcommand};

/// Adaptive reference-range monitoring for longitudinal steroid profiles:
/// simulate cohorts, fit the Bayesian models, classify samples against
/// personalised limits, and evaluate detection performance.
#[derive(Parser)]
#[command(name = "abp", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Print per-row ingest diagnostics.
    #[arg(long)]
    verbose: bool,
}

#[derive(Args)]
struct DataArgs {
    /// Cohort CSV (defaults to <out>/cohort.csv from a previous simulate).
    #[arg(long)]
    cohort: Option<PathBuf>,
    /// Baseline CSV (defaults to <out>/baseline.csv).
    #[arg(long)]
    baseline: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort with exact ground-truth labels.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Fit the configured model on the training pool and store chains plus
    /// convergence diagnostics.
    Fit {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// Warm-start from the chains of a previous fit directory.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Classify every athlete's samples sequentially against adaptive limits.
    Classify {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Score the policy grid against ground-truth labels.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
    },
}

fn load(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = common.threads.or(cfg.threads) {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().ok();
    }
    Ok(cfg)
}

fn data_paths(common: &Common, data: &DataArgs) -> (PathBuf, PathBuf) {
    let cohort = data.cohort.clone().unwrap_or_else(|| common.out.join("cohort.csv"));
    let baseline = data.baseline.clone().unwrap_or_else(|| common.out.join("baseline.csv"));
    (cohort, baseline)
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Simulate { common } => {
            let cfg = load(common)?;
            cmd_simulate(&cfg, &common.out)
        }
        Command::Fit { common, data, resume } => {
            let cfg = load(common)?;
            let (cohort, baseline) = data_paths(common, data);
            cmd_fit(&cfg, &cohort, &baseline, resume.as_deref(), &common.out, common.verbose)
        }
        Command::Classify { common, data } => {
            let cfg = load(common)?;
            let (cohort, baseline) = data_paths(common, data);
            cmd_classify(&cfg, &cohort, &baseline, &common.out, common.verbose)
        }
        Command::Evaluate { common, data } => {
            let cfg = load(common)?;
            let (cohort, baseline) = data_paths(common, data);
            cmd_evaluate(&cfg, &cohort, &baseline, &common.out, common.verbose)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err) as u8)
        }
    }
}
