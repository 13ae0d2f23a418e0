use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fwshap::pipeline::{
    compute_weight_vector, load_config, load_suite, run_benchmark, run_experiment, RowStatus,
};

#[derive(Parser)]
#[command(name = "fwshap", version, about = "Feature-weighted clustering with TreeSHAP surrogates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and print its report as JSON.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a suite and write the results table (CSV, or JSON for a .json
    /// path). Rows already in the output file are not recomputed.
    Bench {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Exit with failure if any row failed.
        #[arg(long)]
        strict: bool,
    },
    /// Print the weight vector an experiment would apply.
    Weights {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, Box<dyn std::error::Error>> {
    match cli.command {
        Command::Run { config } => {
            let report = run_experiment(&load_config(&config)?)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Bench { suite, out, strict } => {
            let suite = load_suite(&suite)?;
            let outcome = run_benchmark(&suite, Some(&out))?;
            for r in outcome.records.iter().filter(|r| r.status == RowStatus::Failed) {
                eprintln!(
                    "failed: {} {} {} seed {}: {}",
                    r.dataset,
                    r.algorithm,
                    r.weighting,
                    r.seed,
                    r.error.as_deref().unwrap_or("")
                );
            }
            eprintln!(
                "{} rows: {} computed, {} reused, {} failed -> {}",
                outcome.records.len(),
                outcome.executed,
                outcome.reused,
                outcome.failed(),
                out.display()
            );
            Ok(if strict && outcome.failed() > 0 {
                ExitCode::FAILURE
            } else {
                ExitCode::SUCCESS
            })
        }
        Command::Weights { config } => {
            let (names, weights) = compute_weight_vector(&load_config(&config)?)?;
            match weights {
                None => println!("unweighted: no weight vector"),
                Some(w) => {
                    for (name, v) in names.iter().zip(w.as_slice()) {
                        println!("{name}\t{v}");
                    }
                }
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
