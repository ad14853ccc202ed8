//! Synthetic federated classification data and straggler partitioning.
//!
//! Each class is an isotropic Gaussian cluster around a seeded center. Client
//! shards draw their labels from a per-client Dirichlet mixture so the
//! population is non-IID. [`apply_straggler_partition`] then flags the
//! clients holding the most straggler-class examples and strips those classes
//! from everyone else.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use log::warn;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, SimError};
use crate::latency::LognormalParams;
use crate::rng::{Purpose, Streams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientShard {
    pub client_id: usize,
    pub examples: Vec<Example>,
    pub is_straggler: bool,
}

impl ClientShard {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn count_in(&self, classes: &BTreeSet<usize>) -> usize {
        self.examples.iter().filter(|e| classes.contains(&e.label)).count()
    }
}

/// Generation and partitioning parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub n_classes: usize,
    pub d_in: usize,
    pub m_clients: usize,
    /// Log-normal law of the raw shard size; draws are rounded, minimum 1.
    pub size_distribution: LognormalParams,
    /// Global class probabilities. `None` means uniform.
    pub class_mixture: Option<Vec<f64>>,
    /// Dirichlet concentration of per-client class mixtures around the global
    /// mixture. `None` means IID clients.
    pub concentration: Option<f64>,
    /// Standard deviation of each class cluster, per coordinate.
    pub cluster_spread: f64,
    /// Standard deviation of the class centers, per coordinate.
    pub center_scale: f64,
    pub straggler_classes: Vec<usize>,
    pub n_straggler_clients: usize,
    pub n_eval: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_classes: 10,
            d_in: 16,
            m_clients: 400,
            size_distribution: LognormalParams::new(30f64.ln(), 0.5),
            class_mixture: None,
            concentration: Some(10.0),
            cluster_spread: 1.0,
            center_scale: 1.0,
            straggler_classes: vec![0, 1, 2, 3, 4],
            n_straggler_clients: 94,
            n_eval: 2000,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(invalid("n_classes", "must be >= 2"));
        }
        if self.d_in == 0 {
            return Err(invalid("d_in", "must be >= 1"));
        }
        if self.m_clients == 0 {
            return Err(invalid("m_clients", "must be >= 1"));
        }
        self.size_distribution.validate()?;
        if !(self.cluster_spread >= 0.0) || !self.cluster_spread.is_finite() {
            return Err(invalid("cluster_spread", "must be finite and >= 0"));
        }
        if !(self.center_scale >= 0.0) || !self.center_scale.is_finite() {
            return Err(invalid("center_scale", "must be finite and >= 0"));
        }
        if let Some(mix) = &self.class_mixture {
            if mix.len() != self.n_classes {
                return Err(SimError::DimensionMismatch {
                    context: "class_mixture",
                    expected: self.n_classes,
                    actual: mix.len(),
                });
            }
            if mix.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) || mix.iter().sum::<f64>() <= 0.0 {
                return Err(invalid("class_mixture", "entries must be >= 0 with a positive sum"));
            }
        }
        if let Some(alpha) = self.concentration {
            if !(alpha > 0.0) || !alpha.is_finite() {
                return Err(invalid("concentration", "must be finite and > 0"));
            }
        }
        if let Some(&c) = self.straggler_classes.iter().find(|&&c| c >= self.n_classes) {
            return Err(invalid("straggler_classes", format!("class {c} >= n_classes")));
        }
        Ok(())
    }

    pub fn straggler_set(&self) -> BTreeSet<usize> {
        self.straggler_classes.iter().copied().collect()
    }

    fn mixture(&self) -> Vec<f64> {
        let raw = self
            .class_mixture
            .clone()
            .unwrap_or_else(|| vec![1.0; self.n_classes]);
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|p| p / total).collect()
    }

    fn centers(&self, streams: &Streams) -> Vec<Vec<f64>> {
        let mut rng = streams.stream(Purpose::ClassCenters, 0, 0);
        (0..self.n_classes)
            .map(|_| {
                (0..self.d_in)
                    .map(|_| self.center_scale * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect()
    }
}

fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

fn sample_dirichlet<R: Rng + ?Sized>(alphas: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    let mut draws = Vec::with_capacity(alphas.len());
    for &a in alphas {
        if a <= 0.0 {
            draws.push(0.0);
            continue;
        }
        let gamma = Gamma::new(a, 1.0).map_err(|e| invalid("concentration", e.to_string()))?;
        draws.push(gamma.sample(rng));
    }
    let total: f64 = draws.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        // All gamma draws underflowed; fall back to the prior mean.
        let s: f64 = alphas.iter().sum();
        return Ok(alphas.iter().map(|a| a / s).collect());
    }
    Ok(draws.into_iter().map(|g| g / total).collect())
}

fn draw_example<R: Rng + ?Sized>(label: usize, centers: &[Vec<f64>], spread: f64, rng: &mut R) -> Example {
    let features = centers[label]
        .iter()
        .map(|c| c + spread * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Example { features, label }
}

/// Generates raw (unpartitioned) client shards. Every shard is flagged
/// standard; ids are `0..m_clients`.
pub fn generate_synthetic(config: &DataConfig, seed: u64) -> Result<Vec<ClientShard>> {
    config.validate()?;
    let streams = Streams::new(seed);
    let centers = config.centers(&streams);
    let mixture = config.mixture();
    let mut shards = Vec::with_capacity(config.m_clients);
    for client in 0..config.m_clients {
        let id = client as u64;
        let mut size_rng = streams.stream(Purpose::ClientSizes, id, 0);
        let raw: f64 = (config.size_distribution.mu
            + config.size_distribution.sigma * size_rng.sample::<f64, _>(StandardNormal))
        .exp();
        let size = (raw.round() as usize).max(1);

        let probs = match config.concentration {
            None => mixture.clone(),
            Some(alpha) => {
                let alphas: Vec<f64> = mixture.iter().map(|p| alpha * p).collect();
                sample_dirichlet(&alphas, &mut streams.stream(Purpose::ClientMixture, id, 0))?
            }
        };

        let mut ex_rng = streams.stream(Purpose::TrainExamples, id, 0);
        let examples = (0..size)
            .map(|_| {
                let label = sample_categorical(&probs, &mut ex_rng);
                draw_example(label, &centers, config.cluster_spread, &mut ex_rng)
            })
            .collect();
        shards.push(ClientShard {
            client_id: client,
            examples,
            is_straggler: false,
        });
    }
    Ok(shards)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionOutcome {
    pub shards: Vec<ClientShard>,
    pub straggler_ids: Vec<usize>,
    /// Standard clients left with no examples and removed from the population.
    pub dropped_ids: Vec<usize>,
    pub removed_examples: usize,
}

/// Flags the `n_straggler_clients` shards with the most straggler-class
/// examples (ties: lower client id first) as stragglers and removes every
/// straggler-class example from the remaining shards.
pub fn apply_straggler_partition(
    shards: Vec<ClientShard>,
    straggler_classes: &BTreeSet<usize>,
    n_straggler_clients: usize,
) -> Result<PartitionOutcome> {
    if straggler_classes.is_empty() {
        return Err(invalid("straggler_classes", "must be nonempty"));
    }
    if n_straggler_clients > shards.len() {
        return Err(invalid(
            "n_straggler_clients",
            format!("{n_straggler_clients} exceeds client count {}", shards.len()),
        ));
    }
    let mut ranking: Vec<(usize, usize)> = shards
        .iter()
        .map(|s| (s.count_in(straggler_classes), s.client_id))
        .collect();
    ranking.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let flagged: BTreeSet<usize> = ranking.iter().take(n_straggler_clients).map(|&(_, id)| id).collect();

    let mut out = Vec::with_capacity(shards.len());
    let mut dropped_ids = Vec::new();
    let mut removed_examples = 0;
    for mut shard in shards {
        if flagged.contains(&shard.client_id) {
            shard.is_straggler = true;
            out.push(shard);
            continue;
        }
        shard.is_straggler = false;
        let before = shard.examples.len();
        shard.examples.retain(|e| !straggler_classes.contains(&e.label));
        removed_examples += before - shard.examples.len();
        if shard.examples.is_empty() {
            dropped_ids.push(shard.client_id);
        } else {
            out.push(shard);
        }
    }
    if !dropped_ids.is_empty() {
        warn!(
            "dropped {} standard clients left empty by straggler-class removal",
            dropped_ids.len()
        );
    }
    Ok(PartitionOutcome {
        shards: out,
        straggler_ids: flagged.into_iter().collect(),
        dropped_ids,
        removed_examples,
    })
}

/// Draws the held-out sets from the global class mixture on a stream disjoint
/// from training. Returns `(eval_total, eval_straggler)`.
pub fn make_eval_splits(config: &DataConfig, seed: u64) -> Result<(Vec<Example>, Vec<Example>)> {
    config.validate()?;
    let streams = Streams::new(seed);
    let centers = config.centers(&streams);
    let mixture = config.mixture();
    let mut rng = streams.stream(Purpose::EvalExamples, 0, 0);
    let total: Vec<Example> = (0..config.n_eval)
        .map(|_| {
            let label = sample_categorical(&mixture, &mut rng);
            draw_example(label, &centers, config.cluster_spread, &mut rng)
        })
        .collect();
    let classes = config.straggler_set();
    let straggler = total.iter().filter(|e| classes.contains(&e.label)).cloned().collect();
    Ok((total, straggler))
}

/// Client-partitioned training data plus held-out evaluation splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederatedDataset {
    pub shards: Vec<ClientShard>,
    pub eval_total: Vec<Example>,
    pub eval_straggler: Vec<Example>,
    pub straggler_classes: BTreeSet<usize>,
    pub generator_config: DataConfig,
    pub seed: u64,
}

impl FederatedDataset {
    /// Generate, partition, and attach evaluation splits.
    pub fn build(config: &DataConfig, seed: u64) -> Result<Self> {
        let raw = generate_synthetic(config, seed)?;
        let classes = config.straggler_set();
        let outcome = apply_straggler_partition(raw, &classes, config.n_straggler_clients)?;
        let (eval_total, eval_straggler) = make_eval_splits(config, seed)?;
        Ok(Self {
            shards: outcome.shards,
            eval_total,
            eval_straggler,
            straggler_classes: classes,
            generator_config: config.clone(),
            seed,
        })
    }

    pub fn d_in(&self) -> usize {
        self.generator_config.d_in
    }

    pub fn n_classes(&self) -> usize {
        self.generator_config.n_classes
    }

    pub fn total_train_examples(&self) -> usize {
        self.shards.iter().map(ClientShard::len).sum()
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let writer = BufWriter::new(File::create(path)?);
        serde_json::to_writer(writer, self)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let ds: Self = serde_json::from_reader(reader)?;
        ds.generator_config.validate()?;
        Ok(ds)
    }
}

/// One bucket of a data histogram.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramRow {
    /// `shard_size` or `class_count`.
    pub kind: &'static str,
    /// `standard` or `straggler`.
    pub group: &'static str,
    /// Shard size or class index.
    pub key: usize,
    pub count: usize,
}

/// Shard-size and class-count histograms per client group.
pub fn data_histograms(dataset: &FederatedDataset) -> Vec<HistogramRow> {
    let mut sizes: BTreeMap<(&'static str, usize), usize> = BTreeMap::new();
    let mut classes: BTreeMap<(&'static str, usize), usize> = BTreeMap::new();
    for shard in &dataset.shards {
        let group = if shard.is_straggler { "straggler" } else { "standard" };
        *sizes.entry((group, shard.len())).or_default() += 1;
        for e in &shard.examples {
            *classes.entry((group, e.label)).or_default() += 1;
        }
    }
    let sizes = sizes.into_iter().map(|((group, key), count)| HistogramRow {
        kind: "shard_size",
        group,
        key,
        count,
    });
    let classes = classes.into_iter().map(|((group, key), count)| HistogramRow {
        kind: "class_count",
        group,
        key,
        count,
    });
    sizes.chain(classes).collect()
}
