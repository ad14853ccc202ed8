//! Run logs, manifests and config hashing.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use stragglersim_core::{Algorithm, ExperimentConfig, MetricsRecord, RunOutput, RunSummary};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Header {
    pub name: String,
    pub algorithm: Algorithm,
    pub trial: u32,
    pub seed: u64,
    pub config_sha256: String,
    pub version: String,
    pub config: ExperimentConfig,
}

/// One line of a JSONL run log: a header, then metrics, then a summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogLine {
    Header(Box<Header>),
    Metrics(MetricsRecord),
    Summary(Box<RunSummary>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub config_sha256: String,
    pub version: String,
    pub base_seed: u64,
    pub seeds: Vec<u64>,
    pub files: Vec<String>,
}

/// Hash of everything that shapes a single run except its seed. Output path
/// and trial count are excluded so that runs of one experiment can be pooled.
pub fn config_hash(config: &ExperimentConfig) -> String {
    let mut c = config.clone();
    c.out = None;
    c.trials = 1;
    c.seed = 0;
    let bytes = serde_json::to_vec(&c).expect("config serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Per-trial log paths and the manifest path for an output target.
///
/// A single trial writes to `out` exactly; several trials write
/// `{stem}_{i}.jsonl` next to it.
pub fn trial_paths(out: &Path, trials: u32) -> (Vec<PathBuf>, PathBuf) {
    let dir = out.parent().map(Path::to_path_buf).unwrap_or_default();
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    let manifest = dir.join(format!("{stem}.manifest.json"));
    if trials == 1 {
        return (vec![out.to_path_buf()], manifest);
    }
    let files = (0..trials).map(|i| dir.join(format!("{stem}_{i}.jsonl"))).collect();
    (files, manifest)
}

pub fn write_log(path: &Path, header: Header, run: &RunOutput) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let file = fs::File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut w = BufWriter::new(file);
    let mut line = |l: &LogLine| -> Result<()> {
        serde_json::to_writer(&mut w, l)?;
        w.write_all(b"\n")?;
        Ok(())
    };
    line(&LogLine::Header(Box::new(header)))?;
    for r in &run.records {
        line(&LogLine::Metrics(r.clone()))?;
    }
    line(&LogLine::Summary(Box::new(run.summary.clone())))?;
    w.flush()?;
    Ok(())
}

/// A parsed run log.
#[derive(Debug, Clone)]
pub struct RunLog {
    pub header: Header,
    pub records: Vec<MetricsRecord>,
    pub summary: RunSummary,
}

pub fn read_log(path: &Path) -> Result<RunLog> {
    let file = fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut header = None;
    let mut records = Vec::new();
    let mut summary = None;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: LogLine = serde_json::from_str(&line)
            .with_context(|| format!("{}:{}: malformed log line", path.display(), i + 1))?;
        match parsed {
            LogLine::Header(h) if header.is_none() && i == 0 => header = Some(*h),
            LogLine::Metrics(r) if header.is_some() && summary.is_none() => records.push(r),
            LogLine::Summary(s) if header.is_some() && summary.is_none() => summary = Some(*s),
            _ => bail!("{}:{}: unexpected record order", path.display(), i + 1),
        }
    }
    match (header, summary) {
        (Some(header), Some(summary)) => Ok(RunLog {
            header,
            records,
            summary,
        }),
        _ => bail!("{}: log lacks a header or summary line", path.display()),
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

/// CSV writer to a file, or stdout when `path` is `None`.
pub fn csv_writer(path: Option<&Path>) -> Result<csv::Writer<Box<dyn Write>>> {
    let sink: Box<dyn Write> = match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
            }
            Box::new(fs::File::create(p).with_context(|| format!("cannot create {}", p.display()))?)
        }
        None => Box::new(std::io::stdout()),
    };
    Ok(csv::Writer::from_writer(sink))
}
