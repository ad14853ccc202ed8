use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::info;
use rayon::prelude::*;
use stragglersim_core::{run_experiment, ExperimentConfig, RunOptions};

use crate::output::{config_hash, trial_paths, write_json, write_log, Header, Manifest, VERSION};
use crate::{config_path, pool, Status};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Base seed; trial i uses seed + i. Defaults to the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of trials. Defaults to the config's trial count.
    #[arg(long)]
    trials: Option<u32>,
    /// Output log path. One trial writes exactly here; several write
    /// `{stem}_{i}.jsonl` alongside. Defaults to the config's `out`, then
    /// `{name}.jsonl`.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let path = config_path(&path.to_path_buf())?;
    ExperimentConfig::load(&path).with_context(|| format!("in config {}", path.display()))
}

pub fn run(args: Args, jobs: usize) -> Result<Status> {
    let mut config = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(trials) = args.trials {
        config.trials = trials;
    }
    config.validate()?;
    let out = args
        .out
        .or_else(|| config.out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(format!("{}.jsonl", config.label())));
    let (files, manifest_path) = trial_paths(&out, config.trials);
    let hash = config_hash(&config);
    let seeds: Vec<u64> = (0..config.trials as u64).map(|i| config.seed + i).collect();
    pool(jobs)?.install(|| {
        files.par_iter().zip(seeds.par_iter()).enumerate().try_for_each(|(i, (path, &seed))| -> Result<()> {
            let run = run_experiment(&config, seed, RunOptions::default())
                .with_context(|| format!("trial {i} (seed {seed})"))?;
            let header = Header {
                name: config.label(),
                algorithm: config.algo.algorithm,
                trial: i as u32,
                seed,
                config_sha256: hash.clone(),
                version: VERSION.into(),
                config: config.clone(),
            };
            write_log(path, header, &run)?;
            info!("trial {i}: straggler {:?}, total {:.4}", run.summary.final_straggler_acc, run.summary.final_total_acc);
            Ok(())
        })
    })?;
    let manifest = Manifest {
        name: config.label(),
        config_sha256: hash,
        version: VERSION.into(),
        base_seed: config.seed,
        seeds,
        files: files
            .iter()
            .map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned())
            .collect(),
    };
    write_json(&manifest_path, &manifest)?;
    Ok(Status::Ok)
}
