//! `attn-margin`: run scenarios, solve a single ATT-SVM, or run the checks.
//!
//! Exit codes: 0 when everything passed, 1 when an assertion failed (or the
//! SVM is not optimal), 2 on usage or runtime errors.

use std::path::PathBuf;
use std::process::ExitCode;

use attn_margin::experiments::{run_checks, run_scenario, ExperimentConfig};
use attn_margin::{att_svm, Error, TokenDataset};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "attn-margin", version, about = "Max-margin token selection experiments for softmax attention")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a named scenario and write its artifacts plus summary.json.
    Run {
        scenario: String,
        /// ExperimentConfig JSON; scenario defaults apply without it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Solve the ATT-SVM of a dataset for one token per input (0-based).
    SolveSvm {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        alpha: Vec<usize>,
        /// Also write the solution JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the acceptance checks, one line per criterion.
    Check {
        /// Restrict to these criterion ids.
        #[arg(long, value_delimiter = ',')]
        only: Vec<u8>,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<bool, Error> {
    match cli.command {
        Command::Run { scenario, config, out, seed, trials, jobs } => {
            let mut cfg = match &config {
                Some(path) => ExperimentConfig::load(path)?,
                None => ExperimentConfig::default(),
            };
            if let Some(named) = &cfg.scenario {
                if named != &scenario {
                    return Err(Error::InvalidInput(format!("config names scenario `{named}` but `{scenario}` was requested")));
                }
            }
            cfg.scenario = Some(scenario);
            cfg.seed = seed.or(cfg.seed);
            cfg.trials = trials.or(cfg.trials);
            cfg.jobs = jobs.or(cfg.jobs);
            let summary = run_scenario(&cfg, &out)?;
            for a in &summary.assertions {
                println!("{} {}: {}", if a.passed { "PASS" } else { "FAIL" }, a.name, a.detail);
            }
            println!("{} {} ({:.2}s) -> {}", summary.scenario, if summary.passed { "passed" } else { "FAILED" }, summary.seconds, out.display());
            Ok(summary.passed)
        }
        Command::SolveSvm { dataset, alpha, out } => {
            let ds = TokenDataset::load(&dataset)?;
            let sol = att_svm(&ds.keys(), &alpha)?;
            let json = sol.to_json_string()?;
            println!("{json}");
            if let Some(path) = out {
                std::fs::write(path, &json)?;
            }
            Ok(sol.is_optimal())
        }
        Command::Check { only } => {
            let results = run_checks(&only);
            if results.is_empty() {
                return Err(Error::InvalidInput(format!("no criteria match {only:?}")));
            }
            for r in &results {
                println!("{}", r.line());
            }
            Ok(results.iter().all(|r| r.passed))
        }
    }
}
