//! Batch front end for `spfactor`: configuration, subcommands and outputs.
//!
//! Flags may also be given through the environment: `SPFACTOR_CONFIG`,
//! `SPFACTOR_SEED`, `SPFACTOR_CHAINS`, `SPFACTOR_THREADS` and
//! `SPFACTOR_OUTPUT`. Exit codes are 0 on success, 1 for runtime errors and 2
//! for usage or configuration errors, which are reported on stderr as a single
//! `error: Kind: message` line.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::commands::RunContext;
use crate::config::{parse_config_with, Overrides};
use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "spfactor", version, about = "Bayesian non-parametric spatial factor analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration.
    #[arg(long, global = true, env = "SPFACTOR_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, env = "SPFACTOR_SEED")]
    pub seed: Option<u64>,
    #[arg(long, global = true, env = "SPFACTOR_CHAINS")]
    pub chains: Option<usize>,
    #[arg(long, global = true, env = "SPFACTOR_THREADS")]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, env = "SPFACTOR_OUTPUT")]
    pub output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Run the sampler and write draws, log-likelihoods and metadata.
    Fit,
    /// Posterior predictive draws at `predict.new_times`.
    Predict,
    /// Co-clustering, factor selection, gap statistic and k-means.
    Cluster,
    /// WAIC, Geweke statistics, acceptance rates and held-out CRPS.
    Diagnose,
    /// Generate a simulated dataset and its truth.
    Simulate,
    /// Fit the comparison models to replicated simulated datasets.
    Experiment,
}

fn execute(cli: &Cli) -> Result<()> {
    let (text, base) = match &cli.config {
        Some(path) => {
            let text = output::read_required(path)?;
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (text, base)
        }
        None => (String::new(), PathBuf::from(".")),
    };
    let overrides =
        Overrides { seed: cli.seed, chains: cli.chains, threads: cli.threads, output: cli.output.clone() };
    let cfg = parse_config_with(&text, &overrides, &base)?;
    let ctx = RunContext { cfg: &cfg, config_hash: output::config_hash(&text) };
    let run = || match cli.command {
        Command::Fit => commands::fit(&ctx),
        Command::Predict => commands::predict(&ctx),
        Command::Cluster => commands::cluster(&ctx),
        Command::Diagnose => commands::diagnose(&ctx),
        Command::Simulate => commands::simulate(&ctx),
        Command::Experiment => commands::experiment(&ctx),
    };
    match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Io(e.to_string()))?
            .install(run),
        None => run(),
    }
}

/// Parses `args` and runs the subcommand, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("{}", CliError::Usage(first.to_string()).line());
            return 2;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.line());
            e.exit_code()
        }
    }
}
