use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use stragglersim_core::metrics::TrialFinal;
use stragglersim_core::{Algorithm, TrialSummary};

use crate::output::{csv_writer, read_log, RunLog};
use crate::Status;

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Glob pattern of JSONL run logs, e.g. 'runs/*.jsonl'.
    #[arg(long = "in")]
    input: String,
    /// Output CSV; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Pool runs that share a name even if their config hashes differ.
    #[arg(long)]
    force_mixed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub name: String,
    pub algorithm: Algorithm,
    pub metric: &'static str,
    pub n_trials: usize,
    pub median: f64,
    pub lo: f64,
    pub hi: f64,
    pub time_median_s: f64,
}

pub struct Group {
    pub name: String,
    pub algorithm: Algorithm,
    pub summary: TrialSummary,
}

/// Summaries per run name, best straggler accuracy first.
pub fn summarize(logs: &[RunLog], force_mixed: bool) -> Result<Vec<Group>> {
    let mut by_name: BTreeMap<&str, Vec<&RunLog>> = BTreeMap::new();
    for log in logs {
        by_name.entry(&log.header.name).or_default().push(log);
    }
    let mut groups = Vec::new();
    for (name, runs) in by_name {
        if let Some(r) = runs.iter().find(|r| r.records.is_empty()) {
            bail!("run `{name}` (seed {}) has no metrics records", r.header.seed);
        }
        let first = &runs[0].header;
        if !force_mixed {
            if let Some(other) = runs.iter().find(|r| r.header.config_sha256 != first.config_sha256) {
                bail!(
                    "runs named `{name}` have different config hashes ({} vs {}); pass --force-mixed to pool them",
                    &first.config_sha256[..12.min(first.config_sha256.len())],
                    &other.header.config_sha256[..12.min(other.header.config_sha256.len())]
                );
            }
        }
        let finals: Vec<TrialFinal> = runs
            .iter()
            .map(|r| TrialFinal {
                total_acc: r.summary.final_total_acc,
                straggler_acc: r.summary.final_straggler_acc,
                total_time_s: r.summary.total_time_s,
            })
            .collect();
        groups.push(Group {
            name: name.to_string(),
            algorithm: first.algorithm,
            summary: stragglersim_core::metrics::summarize_trials(&finals)?,
        });
    }
    let key = |g: &Group| g.summary.straggler_acc.map(|i| i.median).unwrap_or(g.summary.total_acc.median);
    groups.sort_by(|a, b| key(b).total_cmp(&key(a)).then_with(|| a.name.cmp(&b.name)));
    Ok(groups)
}

pub fn rows(groups: &[Group]) -> Vec<ReportRow> {
    let mut out = Vec::new();
    for g in groups {
        let s = &g.summary;
        let metrics = s
            .straggler_acc
            .map(|i| ("straggler_acc", i))
            .into_iter()
            .chain(std::iter::once(("total_acc", s.total_acc)));
        for (metric, i) in metrics {
            out.push(ReportRow {
                name: g.name.clone(),
                algorithm: g.algorithm,
                metric,
                n_trials: s.n_trials,
                median: i.median,
                lo: i.lo,
                hi: i.hi,
                time_median_s: s.total_time_s.median,
            });
        }
    }
    out
}

pub fn run(args: Args) -> Result<Status> {
    let mut paths: Vec<PathBuf> = glob::glob(&args.input)
        .with_context(|| format!("bad pattern {}", args.input))?
        .collect::<std::result::Result<_, _>>()?;
    paths.sort();
    if paths.is_empty() {
        bail!("no run logs match {}", args.input);
    }
    let logs = paths.iter().map(|p| read_log(p)).collect::<Result<Vec<_>>>()?;
    let groups = summarize(&logs, args.force_mixed)?;
    let mut w = csv_writer(args.out.as_deref())?;
    for row in rows(&groups) {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(Status::Ok)
}
