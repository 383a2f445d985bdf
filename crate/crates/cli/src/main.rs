use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use qosdiff_cli::{report, run, sweep, ExperimentConfig, RunSummary, SweepAxis};

#[derive(Parser)]
#[command(name = "qosdiff", version, about = "Train and evaluate QoS predictors over densities, seeds and noise levels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured model, density and seed.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Recompute cells that already completed with the same settings.
        #[arg(long)]
        force: bool,
    },
    /// Vary one QoSDiff hyperparameter.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// lambda, dimension or heads.
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated values, e.g. 0.2,0.4,0.6,0.8.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<f64>,
        #[arg(long)]
        force: bool,
    },
    /// Print model × density tables for every run under a directory.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn finish(summary: &RunSummary) -> ExitCode {
    println!(
        "{} cells run, {} reused, {} failed; results in {}",
        summary.executed,
        summary.skipped,
        summary.failed.len(),
        summary.output.display()
    );
    for (cell, err) in &summary.failed {
        eprintln!("failed {cell}: {err}");
    }
    if summary.success() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn main() -> anyhow::Result<ExitCode> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, force } => {
            let cfg = ExperimentConfig::from_file(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            Ok(finish(&run(&cfg, force)?))
        }
        Command::Sweep {
            config,
            axis,
            values,
            force,
        } => {
            let cfg = ExperimentConfig::from_file(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            Ok(finish(&sweep(&cfg, axis, &values, force)?))
        }
        Command::Report { dir } => {
            print!("{}", report::report(&dir)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}
