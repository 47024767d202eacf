//! `stmrf` command-line interface.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stmrf::sim::Setting;
use stmrf::ErrorCategory;

use crate::config::Overrides;

#[derive(Debug, Parser)]
#[command(name = "stmrf", version, about = "Spatio-temporal MRF inference for expression lattices")]
struct Cli {
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long, global = true, env = "STMRF_THREADS")]
    threads: Option<usize>,

    /// More log output (-v info, -vv debug); RUST_LOG takes precedence.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// MCEM schedule such as `20x500/1500,20x1000/6000` (iterations x burn-in / chain length).
    #[arg(long)]
    pub stages: Option<String>,
    /// Target posterior FDR for DE calls.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Posterior probability at which a cell is called expressed.
    #[arg(long)]
    pub cutoff: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct Checkpointing {
    /// Write a checkpoint here after every MCEM iteration.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Continue from a checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Stop once this many MCEM iterations have completed (requires --checkpoint).
    #[arg(long)]
    pub stop_after: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the expression model and call expressed cells.
    FitExpression {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        metadata: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ckpt: Checkpointing,
    },
    /// Fit the DE model on z-scores and call DE transitions.
    FitDe {
        /// Expression dataset; z-scores are computed from it.
        #[arg(long, conflicts_with = "zscores")]
        input: Option<PathBuf>,
        /// Precomputed z-score table instead of an expression dataset.
        #[arg(long)]
        zscores: Option<PathBuf>,
        #[arg(long)]
        metadata: PathBuf,
        /// Expression calls (from fit-expression) used to mask transitions.
        #[arg(long, requires = "input")]
        expressed: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ckpt: Checkpointing,
    },
    /// Finish a checkpointed fit and compute its posterior.
    Posterior {
        #[arg(long)]
        resume: PathBuf,
        /// Expression dataset (expression checkpoints only).
        #[arg(long, requires = "metadata")]
        input: Option<PathBuf>,
        #[arg(long)]
        metadata: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Keep checkpointing while the remaining iterations run.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Posterior-FDR rejection set for a column of local fdr values.
    Fdr {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "q")]
        column: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Generate one synthetic dataset with its true latent states.
    Simulate {
        #[arg(long)]
        setting: Option<Setting>,
        /// JSON overrides of the simulation parameters.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Run index within the seeded family.
        #[arg(long, default_value_t = 0)]
        run: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score methods over many simulated runs.
    Compare {
        #[arg(long)]
        setting: Option<Setting>,
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        runs: usize,
        /// Comma-separated subset of mrf, plain, eb.
        #[arg(long)]
        methods: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Binomial enrichment of DE calls in a gene set.
    Enrich {
        /// Call table with `gene` and the call column (e.g. de_calls.tsv).
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "de")]
        column: String,
        /// Gene names, one per line.
        #[arg(long)]
        set: PathBuf,
        /// Background DE rate (defaults to the fraction of all genes called).
        #[arg(long)]
        rate: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl Common {
    fn overrides(&self, threads: Option<usize>) -> Overrides {
        Overrides {
            seed: self.seed,
            stages: self.stages.clone(),
            alpha: self.alpha,
            cutoff: self.cutoff,
            threads,
        }
    }
}

fn exit_code(category: ErrorCategory) -> u8 {
    match category {
        ErrorCategory::Input => 2,
        ErrorCategory::Numerical => 3,
        ErrorCategory::Resource => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(cli.command, cli.threads) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.category()))
        }
    }
}
