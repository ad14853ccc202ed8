//! Numerical checks of the auxiliary-model convergence analysis.
//!
//! The testbed is a set of isotropic quadratic clients whose gradients are
//! clipped to norm `G` (making each objective a Huber function) and perturbed
//! with Gaussian noise of total variance `sigma_l^2`. Smoothness, gradient
//! bound, noise level and optimum are therefore known exactly. A stripped-down
//! FeAST loop runs on it with every sampled client reporting each round; the
//! fast/slow split is a uniform random permutation of the cohort.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algorithms::feast::{feast_aux_update, FeastParams};
use crate::error::{Result, SimError};
use crate::params::ParamVector;
use crate::rng::{Purpose, Streams};

fn invalid(name: &'static str, reason: &str) -> SimError {
    SimError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

/// Constants of the smoothness, bounded-gradient and noise assumptions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceAssumptions {
    pub l: f64,
    pub g: f64,
    pub sigma_l: f64,
    pub f_star: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadSetConfig {
    pub m: usize,
    pub d: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Std of each center coordinate.
    pub center_scale: f64,
    pub g_clip: f64,
    pub sigma_l: f64,
}

impl Default for QuadSetConfig {
    fn default() -> Self {
        Self {
            m: 20,
            d: 10,
            lambda_min: 0.5,
            lambda_max: 1.0,
            center_scale: 1.0,
            g_clip: 2.0,
            sigma_l: 0.5,
        }
    }
}

/// Clients `F_i(w) = huber_G(lambda_i/2 * |w - c_i|^2)` with stochastic
/// gradients `clip(lambda_i (w - c_i), G) + N(0, sigma_l^2 / d)` per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadClientSet {
    pub lambdas: Vec<f64>,
    pub centers: Vec<ParamVector>,
    pub g_clip: f64,
    pub sigma_l: f64,
}

impl QuadClientSet {
    pub fn generate(cfg: &QuadSetConfig, seed: u64) -> Result<Self> {
        if cfg.m == 0 || cfg.d == 0 {
            return Err(invalid("m/d", "quad set needs at least one client and dimension"));
        }
        if !(0.0 < cfg.lambda_min && cfg.lambda_min <= cfg.lambda_max) {
            return Err(invalid("lambda", "need 0 < lambda_min <= lambda_max"));
        }
        let mut rng = Streams::new(seed).stream(Purpose::QuadSetup, 0, 0);
        let lambdas = (0..cfg.m)
            .map(|_| rng.random_range(cfg.lambda_min..=cfg.lambda_max))
            .collect();
        let centers = (0..cfg.m)
            .map(|_| {
                (0..cfg.d)
                    .map(|_| cfg.center_scale * rng.sample::<f64, _>(StandardNormal))
                    .collect::<Vec<_>>()
                    .into()
            })
            .collect();
        Self::from_parts(lambdas, centers, cfg.g_clip, cfg.sigma_l)
    }

    pub fn from_parts(lambdas: Vec<f64>, centers: Vec<ParamVector>, g_clip: f64, sigma_l: f64) -> Result<Self> {
        if lambdas.is_empty() || lambdas.len() != centers.len() {
            return Err(invalid("lambdas", "need one positive curvature per center"));
        }
        if lambdas.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
            return Err(invalid("lambdas", "curvatures must be finite and > 0"));
        }
        let d = centers[0].len();
        if d == 0 || centers.iter().any(|c| c.len() != d) {
            return Err(invalid("centers", "centers must share a nonzero dimension"));
        }
        if !(g_clip > 0.0) {
            return Err(invalid("g_clip", "must be > 0"));
        }
        if !(sigma_l >= 0.0) || !sigma_l.is_finite() {
            return Err(invalid("sigma_l", "must be finite and >= 0"));
        }
        Ok(Self {
            lambdas,
            centers,
            g_clip,
            sigma_l,
        })
    }

    pub fn m(&self) -> usize {
        self.lambdas.len()
    }

    pub fn dim(&self) -> usize {
        self.centers[0].len()
    }

    pub fn smoothness(&self) -> f64 {
        self.lambdas.iter().copied().fold(0.0, f64::max)
    }

    pub fn client_loss(&self, i: usize, w: &ParamVector) -> f64 {
        let lambda = self.lambdas[i];
        let r = w.sub(&self.centers[i]).norm();
        if lambda * r <= self.g_clip {
            0.5 * lambda * r * r
        } else {
            self.g_clip * r - self.g_clip * self.g_clip / (2.0 * lambda)
        }
    }

    pub fn client_grad(&self, i: usize, w: &ParamVector) -> ParamVector {
        let mut g = w.sub(&self.centers[i]);
        g.scale(self.lambdas[i]);
        let n = g.norm();
        if n > self.g_clip {
            g.scale(self.g_clip / n);
        }
        g
    }

    pub fn stochastic_grad(&self, i: usize, w: &ParamVector, rng: &mut ChaCha8Rng) -> ParamVector {
        let mut g = self.client_grad(i, w);
        if self.sigma_l > 0.0 {
            let s = self.sigma_l / (self.dim() as f64).sqrt();
            for v in g.as_mut_slice() {
                *v += s * rng.sample::<f64, _>(StandardNormal);
            }
        }
        g
    }

    pub fn loss(&self, w: &ParamVector) -> f64 {
        (0..self.m()).map(|i| self.client_loss(i, w)).sum::<f64>() / self.m() as f64
    }

    pub fn grad(&self, w: &ParamVector) -> ParamVector {
        let mut g = ParamVector::zeros(self.dim());
        for i in 0..self.m() {
            g.add_assign(&self.client_grad(i, w));
        }
        g.scale(1.0 / self.m() as f64);
        g
    }

    /// Minimizer and minimum of the average objective by gradient descent.
    pub fn optimum(&self) -> (ParamVector, f64) {
        let step = 1.0 / self.smoothness();
        let mut w = ParamVector::zeros(self.dim());
        for c in &self.centers {
            w.add_assign(c);
        }
        w.scale(1.0 / self.m() as f64);
        for _ in 0..1_000_000 {
            let g = self.grad(&w);
            if g.norm() < 1e-13 {
                break;
            }
            w.axpy(-step, &g);
        }
        let f = self.loss(&w);
        (w, f)
    }

    pub fn assumptions(&self) -> ConvergenceAssumptions {
        ConvergenceAssumptions {
            l: self.smoothness(),
            g: self.g_clip,
            sigma_l: self.sigma_l,
            f_star: self.optimum().1,
        }
    }
}

/// One FeAST run on the quad testbed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadRunConfig {
    pub b: usize,
    pub b_plus: usize,
    pub beta: f64,
    pub eta_g: f64,
    pub eta_a: f64,
    pub eta_l: f64,
    pub local_steps: usize,
    pub rounds: usize,
    /// Every coordinate of `w_0 = a_0`.
    pub init: f64,
}

impl Default for QuadRunConfig {
    fn default() -> Self {
        Self {
            b: 2,
            b_plus: 4,
            beta: 0.5,
            eta_g: 1.0,
            eta_a: 1.0,
            eta_l: 0.05,
            local_steps: 5,
            rounds: 50,
            init: 2.0,
        }
    }
}

impl QuadRunConfig {
    pub fn validate(&self, m: usize) -> Result<()> {
        if self.b == 0 || self.b > self.b_plus || self.b_plus > m {
            return Err(invalid("b/b_plus", "need 1 <= b <= b_plus <= m"));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(invalid("beta", "must lie in [0, 1]"));
        }
        if self.local_steps == 0 {
            return Err(invalid("local_steps", "must be >= 1"));
        }
        for (name, v) in [("eta_g", self.eta_g), ("eta_a", self.eta_a), ("eta_l", self.eta_l)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(invalid(name, "must be finite and >= 0"));
            }
        }
        Ok(())
    }

    /// Closed-form bound on `E|a_t - w_t|^2`.
    pub fn gap_bound(&self, sigma_l: f64, g: f64) -> f64 {
        let tl = self.local_steps as f64;
        let frac = 1.0 - self.b as f64 / self.b_plus as f64;
        4.0 * (self.eta_g * self.eta_l * tl).powi(2) / (1.0 - self.beta).powi(2) * frac * frac * (sigma_l * sigma_l + g * g)
    }
}

/// Models before and after each round plus the logged fast and slow sums.
/// `w[t]`, `a[t]` hold the state entering round `t`; both have `rounds + 1`
/// entries.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadTrace {
    pub config: QuadRunConfig,
    pub w: Vec<ParamVector>,
    pub a: Vec<ParamVector>,
    pub fast: Vec<ParamVector>,
    pub slow: Vec<ParamVector>,
}

pub fn run_feast_quad(set: &QuadClientSet, cfg: &QuadRunConfig, seed: u64) -> Result<QuadTrace> {
    cfg.validate(set.m())?;
    let streams = Streams::new(seed);
    let d = set.dim();
    let w0 = ParamVector::from_vec(vec![cfg.init; d]);
    let params = FeastParams {
        eta_g: cfg.eta_g,
        eta_a: cfg.eta_a,
        beta: cfg.beta,
    };
    let mut trace = QuadTrace {
        config: *cfg,
        w: vec![w0.clone()],
        a: vec![w0],
        fast: Vec::with_capacity(cfg.rounds),
        slow: Vec::with_capacity(cfg.rounds),
    };
    for t in 0..cfg.rounds {
        let w_t = trace.w[t].clone();
        let mut rng = streams.stream(Purpose::QuadAssign, t as u64, 0);
        let mut cohort = index::sample(&mut rng, set.m(), cfg.b_plus).into_vec();
        cohort.shuffle(&mut rng);
        let mut fast = ParamVector::zeros(d);
        let mut slow = ParamVector::zeros(d);
        for (pos, &c) in cohort.iter().enumerate() {
            let mut noise = streams.stream(Purpose::QuadNoise, c as u64, t as u64);
            let mut local = w_t.clone();
            for _ in 0..cfg.local_steps {
                let g = set.stochastic_grad(c, &local, &mut noise);
                local.axpy(-cfg.eta_l, &g);
            }
            let delta = w_t.sub(&local);
            if pos < cfg.b {
                fast.add_assign(&delta);
            } else {
                slow.add_assign(&delta);
            }
        }
        let mut w_next = w_t.clone();
        w_next.axpy(-cfg.eta_g / cfg.b as f64, &fast);
        let mut plus = fast.clone();
        plus.add_assign(&slow);
        let (a_next, _) = feast_aux_update(&trace.a[t], &w_t, &plus, cfg.b_plus, &params)?;
        trace.w.push(w_next);
        trace.a.push(a_next);
        trace.fast.push(fast);
        trace.slow.push(slow);
    }
    Ok(trace)
}

fn run_seeds(set: &QuadClientSet, cfg: &QuadRunConfig, seeds: &[u64]) -> Result<Vec<QuadTrace>> {
    seeds.par_iter().map(|&s| run_feast_quad(set, cfg, s)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    Insufficient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub x: f64,
    pub value: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub status: CheckStatus,
    pub measured: f64,
    pub bound: f64,
    pub se: Option<f64>,
    pub detail: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub series: Vec<SeriesPoint>,
}

impl CheckReport {
    fn new(name: &str, pass: bool, measured: f64, bound: f64, se: Option<f64>, detail: String) -> Self {
        Self {
            name: name.into(),
            status: if pass { CheckStatus::Pass } else { CheckStatus::Fail },
            measured,
            bound,
            se,
            detail,
            series: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.status == CheckStatus::Pass
    }
}

/// Closed-form unrolled gap
/// `eta_g * sum_k beta^k [(1/B - 1/B+) fast_{t-k} - (1/B+) slow_{t-k}]`
/// for the state after round `t`.
pub fn unrolled_gap(trace: &QuadTrace, t: usize) -> ParamVector {
    let c = &trace.config;
    let inv_b = 1.0 / c.b as f64;
    let inv_bp = 1.0 / c.b_plus as f64;
    let mut sum = ParamVector::zeros(trace.w[0].len());
    for k in 0..=t {
        let wk = c.beta.powi(k as i32);
        sum.axpy(wk * (inv_b - inv_bp), &trace.fast[t - k]);
        sum.axpy(-wk * inv_bp, &trace.slow[t - k]);
    }
    sum.scale(c.eta_g);
    sum
}

/// Recomputes `a_{t+1} - w_{t+1}` from the logged deltas for every round.
pub fn check_lemma1_recursion(traces: &[QuadTrace], tol: f64) -> Result<CheckReport> {
    if traces.is_empty() {
        return Err(SimError::Empty("recursion traces"));
    }
    let mut worst = 0.0f64;
    let mut rounds = 0;
    for tr in traces {
        let c = &tr.config;
        if c.eta_a != c.eta_g {
            return Err(SimError::Config("recursion check needs eta_a == eta_g".into()));
        }
        if tr.fast.len() != c.rounds || tr.slow.len() != c.rounds || tr.w.len() != c.rounds + 1 || tr.a.len() != c.rounds + 1 {
            return Err(SimError::Empty("per-round delta logs"));
        }
        for t in 0..c.rounds {
            let rhs = unrolled_gap(tr, t);
            let lhs = tr.a[t + 1].sub(&tr.w[t + 1]);
            let err = lhs.sub(&rhs).norm() / rhs.norm().max(1.0);
            worst = worst.max(err);
        }
        rounds += c.rounds;
    }
    Ok(CheckReport::new(
        "lemma1_recursion",
        worst <= tol,
        worst,
        tol,
        None,
        format!("{} runs, {rounds} rounds; max relative error of unrolled gap", traces.len()),
    ))
}

/// Per-coordinate mean of `a_T - w_T` over seeds must sit within 3 standard
/// errors of zero for at least 99% of coordinates.
pub fn check_zero_mean_gap(set: &QuadClientSet, cfg: &QuadRunConfig, seeds: &[u64]) -> Result<CheckReport> {
    const MIN_SEEDS: usize = 100;
    if seeds.len() < MIN_SEEDS {
        return Ok(CheckReport {
            name: "lemma1_zero_mean_gap".into(),
            status: CheckStatus::Insufficient,
            measured: f64::NAN,
            bound: 0.99,
            se: None,
            detail: format!("{} seeds given, at least {MIN_SEEDS} needed", seeds.len()),
            series: Vec::new(),
        });
    }
    let traces = run_seeds(set, cfg, seeds)?;
    let gaps: Vec<ParamVector> = traces.iter().map(|t| t.a[cfg.rounds].sub(&t.w[cfg.rounds])).collect();
    let n = gaps.len() as f64;
    let d = set.dim();
    let mut within = 0;
    let mut worst_z = 0.0f64;
    for j in 0..d {
        let mean = gaps.iter().map(|g| g[j]).sum::<f64>() / n;
        let var = gaps.iter().map(|g| (g[j] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        let ok = if se > 0.0 { mean.abs() <= 3.0 * se } else { mean == 0.0 };
        if ok {
            within += 1;
        }
        if se > 0.0 {
            worst_z = worst_z.max(mean.abs() / se);
        }
    }
    let frac = within as f64 / d as f64;
    Ok(CheckReport::new(
        "lemma1_zero_mean_gap",
        frac >= 0.99,
        frac,
        0.99,
        None,
        format!("{} seeds, {d} coordinates, largest |mean|/SE = {worst_z:.3}", seeds.len()),
    ))
}

/// Monte Carlo estimate of `E|g|^2` over random clients and random points.
pub fn check_lemma2_variance(set: &QuadClientSet, n_draws: usize, seed: u64) -> Result<CheckReport> {
    if n_draws < 2 {
        return Err(invalid("n_draws", "need at least 2 draws"));
    }
    let streams = Streams::new(seed);
    let mut probe = streams.stream(Purpose::QuadProbe, 0, 0);
    let mut noise = streams.stream(Purpose::QuadNoise, u64::MAX, 0);
    let d = set.dim();
    let spread = set.centers.iter().map(|c| c.norm()).fold(1.0, f64::max);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n_draws {
        let i = probe.random_range(0..set.m());
        let w: ParamVector = (0..d)
            .map(|_| spread * probe.sample::<f64, _>(StandardNormal))
            .collect::<Vec<_>>()
            .into();
        let v = set.stochastic_grad(i, &w, &mut noise).norm_sq();
        sum += v;
        sum_sq += v * v;
    }
    let n = n_draws as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    let se = (var / n).sqrt();
    let bound = set.sigma_l.powi(2) + set.g_clip.powi(2);
    Ok(CheckReport::new(
        "lemma2_variance",
        mean <= bound + 3.0 * se,
        mean,
        bound,
        Some(se),
        format!("{n_draws} draws; pass if mean <= bound + 3 SE"),
    ))
}

/// Empirical `E|a_t - w_t|^2` (upper 3-SE band) against the closed-form bound
/// at every round.
pub fn check_lemma3_gap_bound(set: &QuadClientSet, cfg: &QuadRunConfig, seeds: &[u64], bound_scale: f64) -> Result<CheckReport> {
    if cfg.eta_a != cfg.eta_g {
        return Err(SimError::Config("gap bound needs eta_a == eta_g".into()));
    }
    if seeds.len() < 2 {
        return Err(invalid("seeds", "need at least 2 seeds"));
    }
    let traces = run_seeds(set, cfg, seeds)?;
    let bound = bound_scale * cfg.gap_bound(set.sigma_l, set.g_clip);
    let n = seeds.len() as f64;
    let mut series = Vec::with_capacity(cfg.rounds);
    let mut worst = f64::NEG_INFINITY;
    let mut worst_se = 0.0;
    for t in 1..=cfg.rounds {
        let v: Vec<f64> = traces.iter().map(|tr| tr.a[t].sub(&tr.w[t]).norm_sq()).collect();
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        let upper = mean + 3.0 * se;
        if upper > worst {
            worst = upper;
            worst_se = se;
        }
        series.push(SeriesPoint {
            x: t as f64,
            value: mean,
            bound,
        });
    }
    let mut report = CheckReport::new(
        "lemma3_gap_bound",
        worst <= bound,
        worst,
        bound,
        Some(worst_se),
        format!("{} seeds, {} rounds; measured is max over rounds of mean + 3 SE", seeds.len(), cfg.rounds),
    );
    report.series = series;
    Ok(report)
}

/// Right-hand side of the convergence bound for `T` rounds.
pub fn theorem1_rhs(t: usize, f_gap: f64, a: &ConvergenceAssumptions) -> f64 {
    let tf = t as f64;
    let noise = a.sigma_l.powi(2) + a.g.powi(2);
    f_gap / tf.sqrt() + (10.0 / tf.sqrt() + 2.5 * a.l * a.l / tf) * noise
}

/// Base configuration with the rate schedule `eta_g * eta_l * T_l / 2 = 1/sqrt(T)`
/// and `beta = B / B+`.
pub fn theorem1_schedule(base: &QuadRunConfig, t: usize) -> QuadRunConfig {
    let beta = base.b as f64 / base.b_plus as f64;
    QuadRunConfig {
        beta,
        eta_a: base.eta_g,
        eta_l: 2.0 / (base.eta_g * base.local_steps as f64 * (t as f64).sqrt()),
        rounds: t,
        ..*base
    }
}

fn check_schedule(cfg: &QuadRunConfig) -> Result<()> {
    let t = cfg.rounds as f64;
    let lhs = cfg.eta_g * cfg.eta_l * cfg.local_steps as f64 / 2.0;
    if cfg.rounds == 0 {
        return Err(SimError::Config("schedule needs T >= 1".into()));
    }
    if cfg.beta > cfg.b as f64 / cfg.b_plus as f64 {
        return Err(SimError::Config("schedule needs beta <= B / B+".into()));
    }
    if cfg.eta_g < 1.0 {
        return Err(SimError::Config("schedule needs eta_g >= 1".into()));
    }
    if ((lhs - 1.0 / t.sqrt()) * t.sqrt()).abs() > 1e-9 {
        return Err(SimError::Config("schedule needs eta_g * eta_l * T_l / 2 = 1/sqrt(T)".into()));
    }
    Ok(())
}

/// Average squared full gradient at the auxiliary iterates,
/// `(1/T) sum_{t=1..T} |grad f(a_t)|^2`, averaged over seeds.
pub fn average_grad_norm(set: &QuadClientSet, cfg: &QuadRunConfig, seeds: &[u64]) -> Result<(f64, f64)> {
    check_schedule(cfg)?;
    let traces = run_seeds(set, cfg, seeds)?;
    let per_seed: Vec<f64> = traces
        .iter()
        .map(|tr| tr.a[1..].iter().map(|a| set.grad(a).norm_sq()).sum::<f64>() / cfg.rounds as f64)
        .collect();
    let n = per_seed.len() as f64;
    let mean = per_seed.iter().sum::<f64>() / n;
    let se = if per_seed.len() > 1 {
        (per_seed.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
    } else {
        0.0
    };
    Ok((mean, se))
}

/// Trend and bound check for the scheduled rates over increasing `T`.
pub fn check_theorem1_schedule(set: &QuadClientSet, base: &QuadRunConfig, t_list: &[usize], seeds: &[u64]) -> Result<CheckReport> {
    if t_list.is_empty() || seeds.is_empty() {
        return Err(SimError::Empty("theorem horizons or seeds"));
    }
    let assumptions = set.assumptions();
    let w0 = ParamVector::from_vec(vec![base.init; set.dim()]);
    let f_gap = set.loss(&w0) - assumptions.f_star;
    let mut series = Vec::with_capacity(t_list.len());
    let mut ok = true;
    let mut notes = Vec::new();
    for &t in t_list {
        let cfg = theorem1_schedule(base, t);
        let (lhs, _) = average_grad_norm(set, &cfg, seeds)?;
        let rhs = theorem1_rhs(t, f_gap, &assumptions);
        if lhs > rhs {
            ok = false;
            notes.push(format!("T={t}: {lhs:.4e} > bound {rhs:.4e}"));
        }
        if let Some(prev) = series.last().map(|p: &SeriesPoint| p.value) {
            if lhs > 1.1 * prev {
                ok = false;
                notes.push(format!("T={t}: {lhs:.4e} exceeds 1.1x previous {prev:.4e}"));
            }
        }
        series.push(SeriesPoint {
            x: t as f64,
            value: lhs,
            bound: rhs,
        });
    }
    let first = series[0].value;
    let last = series[series.len() - 1].value;
    let ratio = if first > 0.0 { last / first } else { 0.0 };
    let detail = if notes.is_empty() {
        format!("{} seeds; measured is last/first average gradient norm", seeds.len())
    } else {
        notes.join("; ")
    };
    let mut report = CheckReport::new("theorem1_schedule", ok, ratio, 1.0, None, detail);
    report.series = series;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    All,
    Lemma1,
    Lemma2,
    Lemma3,
    Theorem1,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub suite: Suite,
    pub seeds: usize,
    pub base_seed: u64,
    pub set: QuadSetConfig,
    /// Shrinks the gap bound so that its check must fail.
    pub inject_broken_bound: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            suite: Suite::All,
            seeds: 200,
            base_seed: 0,
            set: QuadSetConfig::default(),
            inject_broken_bound: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub assumptions: ConvergenceAssumptions,
    pub checks: Vec<CheckReport>,
    pub all_passed: bool,
}

pub const LEMMA2_DRAWS: usize = 100_000;
pub const THEOREM1_HORIZONS: [usize; 3] = [64, 256, 1024];

pub fn run_suite(opts: &VerifyOptions) -> Result<VerifyReport> {
    let set = QuadClientSet::generate(&opts.set, opts.base_seed)?;
    let seeds: Vec<u64> = (0..opts.seeds as u64).map(|i| opts.base_seed + i).collect();
    let base = QuadRunConfig::default();
    let want = |s: Suite| opts.suite == Suite::All || opts.suite == s;
    let mut checks = Vec::new();
    if want(Suite::Lemma1) {
        let few = &seeds[..seeds.len().min(5)];
        let traces = run_seeds(&set, &base, few)?;
        checks.push(check_lemma1_recursion(&traces, 1e-9)?);
        checks.push(check_zero_mean_gap(&set, &base, &seeds)?);
    }
    if want(Suite::Lemma2) {
        checks.push(check_lemma2_variance(&set, LEMMA2_DRAWS, opts.base_seed)?);
    }
    if want(Suite::Lemma3) {
        let scale = if opts.inject_broken_bound { 1e-6 } else { 1.0 };
        checks.push(check_lemma3_gap_bound(&set, &base, &seeds, scale)?);
    }
    if want(Suite::Theorem1) {
        checks.push(check_theorem1_schedule(&set, &base, &THEOREM1_HORIZONS, &seeds)?);
    }
    let all_passed = checks.iter().all(|c| c.status != CheckStatus::Fail);
    Ok(VerifyReport {
        assumptions: set.assumptions(),
        checks,
        all_passed,
    })
}
