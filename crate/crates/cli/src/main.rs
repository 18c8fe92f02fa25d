use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use geomcmc::runner::{self, RunOptions};

#[derive(Parser)]
#[command(version, about = "Function-space MCMC experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every chain of an experiment and write its artifacts.
    Run {
        /// Experiment configuration or a previous run's manifest.json.
        config: PathBuf,
        /// Write artifacts here instead of the configured output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Number of chains to run in parallel.
        #[arg(long, short)]
        jobs: Option<usize>,
    },
    /// Check a configuration without running it.
    Validate { config: PathBuf },
    /// Rebuild summary.csv/summary.json from a finished run.
    Summarize {
        dir: PathBuf,
        /// Method label to compute speedups against.
        #[arg(long)]
        baseline: Option<String>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn execute(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Run { config, out, jobs } => {
            if jobs == Some(0) {
                anyhow::bail!("--jobs must be at least 1");
            }
            let cfg = runner::load_config(&config)?;
            let outcome = runner::run(&cfg, &RunOptions { output_dir: out, jobs })
                .with_context(|| format!("running {}", config.display()))?;
            print!("{}", runner::format_summary(&outcome.summary));
            println!(
                "wrote {} in {:.1} s",
                outcome.output_dir.display(),
                outcome.seconds
            );
        }
        Command::Validate { config } => {
            let cfg = runner::load_config(&config)?;
            let report = runner::validate(&cfg)?;
            for w in &report.warnings {
                println!("warning: {w}");
            }
            println!("ok: {} chains ({})", report.labels.len(), report.labels.join(", "));
        }
        Command::Summarize { dir, baseline } => {
            let rows = runner::summarize_dir(&dir, baseline.as_deref())?;
            print!("{}", runner::format_summary(&rows));
        }
    }
    Ok(())
}
