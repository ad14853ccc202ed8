use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Deserialize;
use serde_json::Value;
use stragglersim_core::metrics::{summarize_trials, Interval, TrialFinal};
use stragglersim_core::{run_experiment, ExperimentConfig, RunOptions};

use crate::output::csv_writer;
use crate::{config_path, pool, Objective, Status};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Sweep file: `{"base": {...}, "grid": {"algo.eta_g": [..], ..}, "objective": ".."}`.
    #[arg(long)]
    config: PathBuf,
    /// Override the objective named in the sweep file.
    #[arg(long, value_enum)]
    objective: Option<Objective>,
    /// Trials per grid point. Defaults to the base config's trial count.
    #[arg(long)]
    trials: Option<u32>,
    /// Base seed for every grid point.
    #[arg(long)]
    seed: Option<u64>,
    /// Largest grid the sweep will run.
    #[arg(long, default_value_t = 256)]
    max_points: usize,
    /// Output CSV; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ObjectiveName {
    StragglerAcc,
    TotalAcc,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepFile {
    base: Value,
    grid: BTreeMap<String, Vec<Value>>,
    #[serde(default)]
    objective: Option<ObjectiveName>,
}

/// Set `path` (dot separated) inside a JSON object, creating objects as needed.
pub fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let Value::Object(map) = cur else {
            bail!("cannot set `{path}`: `{}` is not an object", parts[..i].join("."));
        };
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        cur = map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    bail!("empty parameter path")
}

/// Outer product of the grid; the last key varies fastest.
pub fn expand(grid: &BTreeMap<String, Vec<Value>>) -> Vec<Vec<Value>> {
    let mut points = vec![Vec::new()];
    for values in grid.values() {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push(v.clone());
                    q
                })
            })
            .collect();
    }
    points
}

pub fn run(args: Args, jobs: usize) -> Result<Status> {
    let path = config_path(&args.config)?;
    let text = std::fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
    let sweep: SweepFile = serde_json::from_str(&text).with_context(|| format!("in sweep file {}", path.display()))?;
    if let Some((k, _)) = sweep.grid.iter().find(|(_, v)| v.is_empty()) {
        bail!("grid parameter `{k}` has no values");
    }
    let objective = args.objective.unwrap_or(match sweep.objective {
        Some(ObjectiveName::TotalAcc) => Objective::TotalAcc,
        _ => Objective::StragglerAcc,
    });
    let points = expand(&sweep.grid);
    if points.len() > args.max_points {
        bail!("grid has {} points, above the cap of {}; raise it with --max-points", points.len(), args.max_points);
    }
    let keys: Vec<&String> = sweep.grid.keys().collect();
    let mut configs = Vec::with_capacity(points.len());
    for (i, point) in points.iter().enumerate() {
        let mut v = sweep.base.clone();
        for (k, val) in keys.iter().zip(point) {
            set_path(&mut v, k, val.clone())?;
        }
        let mut cfg = ExperimentConfig::from_json_str(&v.to_string()).with_context(|| format!("grid point {i}"))?;
        if let Some(t) = args.trials {
            cfg.trials = t;
        }
        if let Some(s) = args.seed {
            cfg.seed = s;
        }
        cfg.validate().with_context(|| format!("grid point {i}"))?;
        configs.push(cfg);
    }
    let tasks: Vec<(usize, u64)> = configs
        .iter()
        .enumerate()
        .flat_map(|(i, c)| (0..c.trials as u64).map(move |t| (i, c.seed + t)))
        .collect();
    let finals: Vec<(usize, TrialFinal)> = pool(jobs)?.install(|| {
        tasks
            .par_iter()
            .map(|&(i, seed)| -> Result<(usize, TrialFinal)> {
                let run = run_experiment(&configs[i], seed, RunOptions::default())
                    .with_context(|| format!("grid point {i}, seed {seed}"))?;
                let s = run.summary;
                Ok((
                    i,
                    TrialFinal {
                        total_acc: s.final_total_acc,
                        straggler_acc: s.final_straggler_acc,
                        total_time_s: s.total_time_s,
                    },
                ))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut rows: Vec<(usize, Interval, f64, usize)> = Vec::with_capacity(points.len());
    for i in 0..points.len() {
        let runs: Vec<TrialFinal> = finals.iter().filter(|(j, _)| *j == i).map(|(_, f)| *f).collect();
        let summary = summarize_trials(&runs)?;
        let interval = match objective {
            Objective::TotalAcc => summary.total_acc,
            Objective::StragglerAcc => summary
                .straggler_acc
                .with_context(|| format!("grid point {i} has no straggler classes to score"))?,
        };
        rows.push((i, interval, summary.total_time_s.median, summary.n_trials));
    }
    rows.sort_by(|a, b| b.1.median.total_cmp(&a.1.median).then(a.0.cmp(&b.0)));
    let objective_name = match objective {
        Objective::StragglerAcc => "straggler_acc",
        Objective::TotalAcc => "total_acc",
    };
    let mut w = csv_writer(args.out.as_deref())?;
    let mut header: Vec<String> = keys.iter().map(|k| k.to_string()).collect();
    header.extend(["objective", "n_trials", "median", "lo", "hi", "time_median_s", "best"].map(String::from));
    w.write_record(&header)?;
    for (rank, (i, interval, time, n)) in rows.iter().enumerate() {
        let mut rec: Vec<String> = points[*i].iter().map(|v| v.to_string()).collect();
        rec.push(objective_name.into());
        rec.push(n.to_string());
        rec.extend([interval.median, interval.lo, interval.hi, *time].map(|x| x.to_string()));
        rec.push((rank == 0).to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(Status::Ok)
}
