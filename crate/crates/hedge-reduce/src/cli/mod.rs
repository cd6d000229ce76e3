//! Command-line front end: config loading, subcommand dispatch, and
//! error-to-exit-code mapping. All numerics live in the library modules.

pub mod config;
pub mod pipeline;
pub mod result;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::error::Result;
use crate::states::StateTable;
use config::ExperimentConfig;
use result::ResultFile;

const EXIT_CODE_HELP: &str = "Exit codes:
  0  success
  2  configuration error (unparseable or inconsistent config)
  3  numerical error (singular system, non-convergence, non-finite data)
  4  i/o error (unreadable, corrupt, or unwritable files)";

#[derive(Debug, Parser)]
#[command(
    name = "hedge-reduce",
    version,
    about = "Reduced stochastic hedge ratios from pathwise sensitivities",
    after_help = EXIT_CODE_HELP
)]
pub struct Cli {
    /// Upper bound on worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the full pipeline for an experiment config.
    Run {
        /// Experiment config (TOML).
        config: PathBuf,
        /// Force sequential, bitwise-reproducible accumulation and omit
        /// timing metadata from the result.
        #[arg(long)]
        deterministic: bool,
        /// Result file path (overrides the config's output.result).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a stored fit on new states and emit hedge ratios as CSV.
    Apply {
        /// Result file from a previous run.
        result: PathBuf,
        /// States CSV (as produced by export).
        states: PathBuf,
        /// Which fit to apply (e.g. "ls", "galerkin"); default: first.
        #[arg(long)]
        formulation: Option<String>,
        /// Output CSV path; default: stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate and differentiate, then export (A, b, X, Y, states) to a
    /// directory for solver-only reruns.
    Export {
        /// Experiment config (TOML).
        config: PathBuf,
        /// Output directory.
        dir: PathBuf,
    },
    /// Solver-only rerun on previously exported tensors.
    Import {
        /// Experiment config (TOML); path count must match the tensors.
        config: PathBuf,
        /// Directory produced by export.
        dir: PathBuf,
        /// Result file path (overrides the config's output.result).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn configure_threads(threads: Option<usize>) {
    if let Some(k) = threads {
        // Ignore failure: the global pool can only be set once (tests or
        // repeated calls), and numerics do not depend on thread count.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(k.max(1))
            .build_global();
    }
}

fn emit_result(result: &ResultFile, out: Option<&PathBuf>) -> Result<()> {
    let path = out.or(result.config.output.result.as_ref());
    match path {
        Some(path) => {
            result.save(path)?;
            eprintln!("result written to {}", path.display());
        }
        None => {
            let text = toml::to_string(result)
                .map_err(|e| crate::Error::Config(format!("result serialization: {}", e)))?;
            print!("{}", text);
        }
    }
    Ok(())
}

/// Execute a parsed command line. Errors map to exit codes via
/// [`crate::Error::exit_code`].
pub fn execute(cli: &Cli) -> Result<()> {
    configure_threads(cli.threads);
    match &cli.command {
        Command::Run {
            config,
            deterministic,
            out,
        } => {
            let mut config = ExperimentConfig::load(config)?;
            config.deterministic |= deterministic;
            let result = pipeline::run_experiment(&config)?;
            emit_result(&result, out.as_ref())
        }
        Command::Apply {
            result,
            states,
            formulation,
            out,
        } => {
            let result = ResultFile::load(result)?;
            let states = StateTable::read_csv_file(states)?;
            let phi = pipeline::apply_result(&result, &states, formulation.as_deref())?;
            match out {
                Some(path) => {
                    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
                    pipeline::write_hedge_csv(&mut file, &phi)
                }
                None => pipeline::write_hedge_csv(&mut std::io::stdout().lock(), &phi),
            }
        }
        Command::Export { config, dir } => {
            let config = ExperimentConfig::load(config)?;
            pipeline::export_tensors(&config, dir)
        }
        Command::Import { config, dir, out } => {
            let config = ExperimentConfig::load(config)?;
            let result = pipeline::run_from_tensors(&config, dir)?;
            emit_result(&result, out.as_ref())
        }
    }
}
