use std::path::PathBuf;

use anyhow::Result;
use clap::ValueEnum;
use stragglersim_core::data::data_histograms;
use stragglersim_core::latency::latency_percentiles;
use stragglersim_core::verify::{run_suite, CheckStatus, Suite, VerifyOptions};
use stragglersim_core::{FederatedDataset, Streams};

use crate::output::{csv_writer, write_json};
use crate::simulate::load_config;
use crate::{pool, Status};

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum SuiteArg {
    All,
    Lemma1,
    Lemma2,
    Lemma3,
    Theorem1,
}

impl From<SuiteArg> for Suite {
    fn from(s: SuiteArg) -> Self {
        match s {
            SuiteArg::All => Suite::All,
            SuiteArg::Lemma1 => Suite::Lemma1,
            SuiteArg::Lemma2 => Suite::Lemma2,
            SuiteArg::Lemma3 => Suite::Lemma3,
            SuiteArg::Theorem1 => Suite::Theorem1,
        }
    }
}

#[derive(clap::Args, Debug)]
pub struct VerifyArgs {
    #[arg(long, value_enum, default_value_t = SuiteArg::All)]
    suite: SuiteArg,
    /// Monte Carlo seeds per check.
    #[arg(long, default_value_t = 200)]
    seeds: usize,
    /// First seed; the testbed itself is generated from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, hide = true)]
    inject_broken_bound: bool,
}

pub fn verify(args: VerifyArgs, jobs: usize) -> Result<Status> {
    let opts = VerifyOptions {
        suite: args.suite.into(),
        seeds: args.seeds,
        base_seed: args.seed,
        inject_broken_bound: args.inject_broken_bound,
        ..Default::default()
    };
    let report = pool(jobs)?.install(|| run_suite(&opts))?;
    for c in &report.checks {
        let status = match c.status {
            CheckStatus::Pass => "PASS",
            CheckStatus::Fail => "FAIL",
            CheckStatus::Insufficient => "SKIP",
        };
        println!("{status} {:<22} measured {:.6e}  bound {:.6e}  {}", c.name, c.measured, c.bound, c.detail);
    }
    if let Some(out) = &args.out {
        write_json(out, &report)?;
    }
    if report.all_passed {
        Ok(Status::Ok)
    } else {
        let failed: Vec<&str> = report
            .checks
            .iter()
            .filter(|c| c.status == CheckStatus::Fail)
            .map(|c| c.name.as_str())
            .collect();
        eprintln!("failed checks: {}", failed.join(", "));
        Ok(Status::ChecksFailed)
    }
}

#[derive(clap::Args, Debug)]
pub struct LatencyArgs {
    #[arg(long)]
    config: PathBuf,
    /// Seed for the population and the latency draws. Defaults to the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Draws per client.
    #[arg(long, default_value_t = 100)]
    draws: usize,
    /// Output CSV; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn latency_report(args: LatencyArgs) -> Result<Status> {
    let config = load_config(&args.config)?;
    let seed = args.seed.unwrap_or(config.seed);
    let data = FederatedDataset::build(&config.dataset, config.data_seed.unwrap_or(seed))?;
    let rows = latency_percentiles(&config.latency, &data, &Streams::new(seed), args.draws)?;
    let mut w = csv_writer(args.out.as_deref())?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(Status::Ok)
}

#[derive(clap::Args, Debug)]
pub struct DataArgs {
    #[arg(long)]
    config: PathBuf,
    /// Dataset seed. Defaults to the config's data seed, then its seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the full dataset as JSON.
    #[arg(long)]
    export: Option<PathBuf>,
}

pub fn data_report(args: DataArgs) -> Result<Status> {
    let config = load_config(&args.config)?;
    let seed = args.seed.or(config.data_seed).unwrap_or(config.seed);
    let data = FederatedDataset::build(&config.dataset, seed)?;
    let mut w = csv_writer(args.out.as_deref())?;
    for r in data_histograms(&data) {
        w.serialize(r)?;
    }
    w.flush()?;
    if let Some(path) = &args.export {
        data.save_json(path)?;
    }
    Ok(Status::Ok)
}
