//! `stragglersim` command-line front end.

mod output;
mod report;
mod simulate;
mod sweep;
mod tools;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "stragglersim", version, about = "Federated learning simulator with straggler clients")]
struct Cli {
    /// Parallel workers for trials and sweep points (0 = one per core).
    #[arg(long, global = true, env = "STRAGGLERSIM_JOBS", default_value_t = 0)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run an experiment config for one or more trials and write JSONL logs.
    Simulate(simulate::Args),
    /// Run a parameter grid and rank the points by an objective.
    Sweep(sweep::Args),
    /// Summarize run logs into a CSV table of medians and 90% intervals.
    Report(report::Args),
    /// Numerically check the convergence lemmas on a quadratic testbed.
    Verify(tools::VerifyArgs),
    /// Percentiles of simulated client latency for a config's population.
    LatencyReport(tools::LatencyArgs),
    /// Shard-size and class-count histograms for a config's dataset.
    DataReport(tools::DataArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Objective {
    StragglerAcc,
    TotalAcc,
}

/// Outcome of a subcommand that completed without I/O or config errors.
pub enum Status {
    Ok,
    ChecksFailed,
}

pub fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?)
}

fn run(cli: Cli) -> Result<Status> {
    let jobs = cli.jobs;
    match cli.command {
        Command::Simulate(a) => simulate::run(a, jobs),
        Command::Sweep(a) => sweep::run(a, jobs),
        Command::Report(a) => report::run(a),
        Command::Verify(a) => tools::verify(a, jobs),
        Command::LatencyReport(a) => tools::latency_report(a),
        Command::DataReport(a) => tools::data_report(a),
    }
}

pub fn config_path(p: &PathBuf) -> Result<PathBuf> {
    if !p.exists() {
        anyhow::bail!("config file not found: {}", p.display());
    }
    Ok(p.clone())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::ChecksFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
