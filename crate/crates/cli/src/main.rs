//! `qffbandit`: run, replay and certify private GP-UCB experiments.
//!
//! Exit codes: 0 on success, 2 for configuration errors, 3 for runtime or numeric
//! failures (including a replay that does not match its archive).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qffbandit::config::ExperimentSpec;
use qffbandit::harness::{self, CellSummary};
use qffbandit::Error;

#[derive(Parser)]
#[command(
    name = "qffbandit",
    version,
    about = "Differentially private GP-UCB with quadrature Fourier features"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every sweep cell and write CSV logs, a summary and a regret plot.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Re-execute an archived config and compare against its CSV logs.
    Replay {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Print the feature map's measured uniform error and the analytic bound.
    Certify {
        #[arg(long)]
        config: PathBuf,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn load(path: &Path) -> Result<ExperimentSpec, Failure> {
    ExperimentSpec::from_file(path).map_err(|e| Failure::Config(e.to_string()))
}

fn print_summaries(summaries: &[CellSummary]) {
    println!(
        "{:<36} {:>7} {:>14} {:>12} {:>14}",
        "cell", "trials", "mean R(T)", "std R(T)", "mean R(T/2)"
    );
    for s in summaries {
        println!(
            "{:<36} {:>7} {:>14.4} {:>12.4} {:>14.4}",
            s.name, s.trials, s.mean_final, s.std_final, s.mean_half
        );
    }
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run {
            config,
            trials,
            seed,
            out,
            parallel,
        } => {
            let mut spec = load(&config)?;
            if let Some(n) = trials {
                if n == 0 {
                    return Err(Failure::Config("--trials must be at least 1".into()));
                }
                spec.trials = n;
            }
            if let Some(s) = seed {
                spec.master_seed = s;
                spec.base.seed = s;
            }
            if let Some(dir) = out {
                spec.out_dir = dir;
            }
            if parallel == 0 {
                return Err(Failure::Config("--parallel must be at least 1".into()));
            }
            let output = harness::run_experiment(&spec, parallel)?;
            print_summaries(&output.summaries);
            println!(
                "wrote {} files to {}",
                output.files.len(),
                output.out_dir.display()
            );
            Ok(())
        }
        Command::Replay {
            config,
            seed,
            parallel,
        } => {
            load(&config)?;
            let report = harness::replay(&config, seed, parallel)?;
            if let Some((recorded, actual)) = &report.hash_mismatch {
                eprintln!("warning: config hash mismatch (recorded {recorded}, contents {actual})");
            }
            for cell in &report.cells {
                for (trial, rec) in cell.records.iter().enumerate() {
                    println!(
                        "{} trial {trial}: final cumulative regret {}",
                        cell.name(),
                        harness::fmt_f64(rec.cumulative_regret())
                    );
                }
            }
            for (path, same) in &report.comparisons {
                println!(
                    "{}: {}",
                    path.display(),
                    if *same { "identical" } else { "DIFFERS" }
                );
            }
            if report.all_identical() {
                Ok(())
            } else {
                Err(Failure::Runtime(
                    "replay does not match the archived logs".into(),
                ))
            }
        }
        Command::Certify { config } => {
            let spec = load(&config)?;
            let (cfg, cert) = harness::certify(&spec)?;
            println!("feature_kind = {}", cfg.feature_kind.as_str());
            println!("m_bar = {}", cfg.m_bar);
            println!("grid_size = {}", cert.grid_size);
            println!("measured_error = {}", harness::fmt_f64(cert.measured));
            match cert.bound {
                Some(b) => println!("analytic_bound = {}", harness::fmt_f64(b)),
                None => println!("analytic_bound = none"),
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
