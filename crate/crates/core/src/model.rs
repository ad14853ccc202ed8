//! Small classifier with analytic gradients: multinomial logistic regression
//! or a one-hidden-layer tanh MLP.
//!
//! Parameter layout (row-major):
//! - linear: `W[n_classes x d_in]`, `b[n_classes]`
//! - mlp: `W1[hidden x d_in]`, `b1[hidden]`, `W2[n_classes x hidden]`, `b2[n_classes]`

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::error::{invalid, Result, SimError};
use crate::params::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub d_in: usize,
    /// Hidden width; 0 selects the linear model.
    pub hidden: usize,
    pub n_classes: usize,
    pub activation: Activation,
}

impl Layout {
    pub fn linear(d_in: usize, n_classes: usize) -> Self {
        Self {
            d_in,
            hidden: 0,
            n_classes,
            activation: Activation::Tanh,
        }
    }

    pub fn mlp(d_in: usize, hidden: usize, n_classes: usize) -> Self {
        Self {
            d_in,
            hidden,
            n_classes,
            activation: Activation::Tanh,
        }
    }

    pub fn n_params(&self) -> usize {
        if self.hidden == 0 {
            self.n_classes * self.d_in + self.n_classes
        } else {
            self.hidden * self.d_in + self.hidden + self.n_classes * self.hidden + self.n_classes
        }
    }

    fn check_params(&self, w: &ParamVector) -> Result<()> {
        if w.len() != self.n_params() {
            return Err(SimError::DimensionMismatch {
                context: "parameter vector",
                expected: self.n_params(),
                actual: w.len(),
            });
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d_in {
            return Err(SimError::DimensionMismatch {
                context: "feature vector",
                expected: self.d_in,
                actual: x.len(),
            });
        }
        Ok(())
    }
}

/// Form of the distillation penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistillLoss {
    /// Cross-entropy of the student log-softmax against the teacher softmax.
    #[default]
    SoftCrossEntropy,
    /// Half squared distance between student and teacher logits.
    LogitMse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    pub loss: DistillLoss,
    pub temperature: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            loss: DistillLoss::SoftCrossEntropy,
            temperature: 1.0,
        }
    }
}

/// Architecture block of the experiment config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: usize,
    pub activation: Activation,
    /// Half-width of the uniform initialization interval.
    pub init_scale: f64,
    pub distill: DistillConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 0,
            activation: Activation::Tanh,
            init_scale: 0.05,
            distill: DistillConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn layout(&self, d_in: usize, n_classes: usize) -> Layout {
        Layout {
            d_in,
            hidden: self.hidden,
            n_classes,
            activation: self.activation,
        }
    }
}

/// Uniform initialization in `[-scale, scale]`.
pub fn init_params<R: Rng + ?Sized>(layout: &Layout, scale: f64, rng: &mut R) -> ParamVector {
    (0..layout.n_params())
        .map(|_| if scale > 0.0 { rng.random_range(-scale..=scale) } else { 0.0 })
        .collect::<Vec<_>>()
        .into()
}

struct Forward {
    logits: Vec<f64>,
    hidden: Vec<f64>,
}

fn forward(layout: &Layout, w: &[f64], x: &[f64]) -> Forward {
    let (d, h, c) = (layout.d_in, layout.hidden, layout.n_classes);
    if h == 0 {
        let (weights, bias) = w.split_at(c * d);
        let logits = (0..c)
            .map(|k| {
                let row = &weights[k * d..(k + 1) * d];
                row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + bias[k]
            })
            .collect();
        return Forward {
            logits,
            hidden: Vec::new(),
        };
    }
    let (w1, rest) = w.split_at(h * d);
    let (b1, rest) = rest.split_at(h);
    let (w2, b2) = rest.split_at(c * h);
    let hidden: Vec<f64> = (0..h)
        .map(|j| {
            let pre = w1[j * d..(j + 1) * d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b1[j];
            pre.tanh()
        })
        .collect();
    let logits = (0..c)
        .map(|k| w2[k * h..(k + 1) * h].iter().zip(&hidden).map(|(a, b)| a * b).sum::<f64>() + b2[k])
        .collect();
    Forward { logits, hidden }
}

/// Logits for one feature vector.
pub fn forward_logits(layout: &Layout, w: &ParamVector, x: &[f64]) -> Result<Vec<f64>> {
    layout.check_params(w)?;
    layout.check_input(x)?;
    Ok(forward(layout, w.as_slice(), x).logits)
}

/// Logits for every example, in order.
pub fn forward_batch(layout: &Layout, w: &ParamVector, batch: &[&Example]) -> Result<Vec<Vec<f64>>> {
    layout.check_params(w)?;
    batch
        .iter()
        .map(|e| {
            layout.check_input(&e.features)?;
            Ok(forward(layout, w.as_slice(), &e.features).logits)
        })
        .collect()
}

pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = z.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    z.iter().map(|v| v - lse).collect()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    log_softmax(z).into_iter().map(f64::exp).collect()
}

/// Components of the regularized client objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub supervised: f64,
    pub distill: f64,
    pub proximal: f64,
    pub total: f64,
}

/// Optional regularizers for [`loss_and_grad`].
#[derive(Debug, Clone, Copy)]
pub struct Regularization<'a> {
    /// Teacher logits aligned with the batch; required iff `rho > 0`.
    pub teacher_logits: Option<&'a [Vec<f64>]>,
    /// Proximal anchor; required iff `nu > 0`.
    pub anchor: Option<&'a ParamVector>,
    pub rho: f64,
    pub nu: f64,
    pub distill: DistillConfig,
}

impl Regularization<'_> {
    pub fn none() -> Self {
        Regularization {
            teacher_logits: None,
            anchor: None,
            rho: 0.0,
            nu: 0.0,
            distill: DistillConfig::default(),
        }
    }
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(SimError::NonFinite(format!("{what} at index {i}"))),
        None => Ok(()),
    }
}

/// Loss `supervised + rho * distill + nu * proximal` and its exact gradient.
///
/// `supervised` and `distill` are batch means; `proximal = ½‖w − anchor‖²`.
pub fn loss_and_grad(
    layout: &Layout,
    w: &ParamVector,
    batch: &[&Example],
    reg: &Regularization<'_>,
) -> Result<(LossBreakdown, ParamVector)> {
    if batch.is_empty() {
        return Err(SimError::Empty("training batch"));
    }
    layout.check_params(w)?;
    if !(reg.rho >= 0.0) || !(reg.nu >= 0.0) {
        return Err(invalid("rho/nu", "regularization strengths must be >= 0"));
    }
    if (reg.rho > 0.0) != reg.teacher_logits.is_some() {
        return Err(invalid("teacher_logits", "must be present iff rho > 0"));
    }
    if (reg.nu > 0.0) != reg.anchor.is_some() {
        return Err(invalid("anchor", "must be present iff nu > 0"));
    }
    if !(reg.distill.temperature > 0.0) {
        return Err(invalid("temperature", "must be > 0"));
    }
    check_finite(w.as_slice(), "model weights")?;
    if let Some(t) = reg.teacher_logits {
        if t.len() != batch.len() {
            return Err(SimError::DimensionMismatch {
                context: "teacher logits",
                expected: batch.len(),
                actual: t.len(),
            });
        }
    }

    let (d, h, c) = (layout.d_in, layout.hidden, layout.n_classes);
    let n = batch.len() as f64;
    let ws = w.as_slice();
    let mut grad = vec![0.0; layout.n_params()];
    let mut supervised = 0.0;
    let mut distill = 0.0;
    let mut dz = vec![0.0; c];

    for (i, ex) in batch.iter().enumerate() {
        layout.check_input(&ex.features)?;
        check_finite(&ex.features, "example features")?;
        if ex.label >= c {
            return Err(invalid("label", format!("{} >= n_classes {c}", ex.label)));
        }
        let fwd = forward(layout, ws, &ex.features);
        let logp = log_softmax(&fwd.logits);
        supervised -= logp[ex.label];
        for k in 0..c {
            dz[k] = logp[k].exp();
        }
        dz[ex.label] -= 1.0;

        if let Some(teacher) = reg.teacher_logits {
            let zt = &teacher[i];
            if zt.len() != c {
                return Err(SimError::DimensionMismatch {
                    context: "teacher logit row",
                    expected: c,
                    actual: zt.len(),
                });
            }
            check_finite(zt, "teacher logits")?;
            match reg.distill.loss {
                DistillLoss::SoftCrossEntropy => {
                    let temp = reg.distill.temperature;
                    let scaled_s: Vec<f64> = fwd.logits.iter().map(|v| v / temp).collect();
                    let scaled_t: Vec<f64> = zt.iter().map(|v| v / temp).collect();
                    let logq = log_softmax(&scaled_s);
                    let p = softmax(&scaled_t);
                    for k in 0..c {
                        distill -= p[k] * logq[k];
                        dz[k] += reg.rho * (logq[k].exp() - p[k]) / temp;
                    }
                }
                DistillLoss::LogitMse => {
                    for k in 0..c {
                        let diff = fwd.logits[k] - zt[k];
                        distill += 0.5 * diff * diff;
                        dz[k] += reg.rho * diff;
                    }
                }
            }
        }

        for v in dz.iter_mut() {
            *v /= n;
        }
        let x = &ex.features;
        if h == 0 {
            for k in 0..c {
                let row = &mut grad[k * d..(k + 1) * d];
                for (g, xj) in row.iter_mut().zip(x) {
                    *g += dz[k] * xj;
                }
                grad[c * d + k] += dz[k];
            }
        } else {
            let w2_off = h * d + h;
            let b2_off = w2_off + c * h;
            for k in 0..c {
                for j in 0..h {
                    grad[w2_off + k * h + j] += dz[k] * fwd.hidden[j];
                }
                grad[b2_off + k] += dz[k];
            }
            for j in 0..h {
                let back: f64 = (0..c).map(|k| ws[w2_off + k * h + j] * dz[k]).sum();
                let dpre = back * (1.0 - fwd.hidden[j] * fwd.hidden[j]);
                for (m, xm) in x.iter().enumerate() {
                    grad[j * d + m] += dpre * xm;
                }
                grad[h * d + j] += dpre;
            }
        }
    }
    supervised /= n;
    distill /= n;

    let mut proximal = 0.0;
    if let Some(anchor) = reg.anchor {
        layout.check_params(anchor)?;
        for (i, (wi, ai)) in ws.iter().zip(anchor.iter()).enumerate() {
            let diff = wi - ai;
            proximal += 0.5 * diff * diff;
            grad[i] += reg.nu * diff;
        }
    }

    let total = supervised + reg.rho * distill + reg.nu * proximal;
    if !total.is_finite() {
        return Err(SimError::NonFinite("loss".into()));
    }
    check_finite(&grad, "gradient")?;
    Ok((
        LossBreakdown {
            supervised,
            distill,
            proximal,
            total,
        },
        ParamVector::from_vec(grad),
    ))
}

/// How much local work a client performs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalWork {
    Epochs(u32),
    Steps(u32),
}

impl LocalWork {
    /// Number of SGD steps for a shard of `n` examples with `batch` per step.
    pub fn steps_for(&self, n: usize, batch: usize) -> usize {
        match *self {
            LocalWork::Epochs(e) => e as usize * n.div_ceil(batch.max(1)),
            LocalWork::Steps(s) => s as usize,
        }
    }
}

/// Client-side optimization settings shared by every local run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalTraining {
    pub work: LocalWork,
    pub batch_size: usize,
    pub eta_l: f64,
    pub rho: f64,
    pub nu: f64,
    pub distill: DistillConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalOutcome {
    pub w: ParamVector,
    pub steps: usize,
    pub examples_processed: usize,
}

/// Minibatch SGD on one shard starting from `w0`.
///
/// Each pass over the data is reshuffled from `rng` unless a single batch
/// covers the whole shard. The last batch of a pass may be short. When
/// `rho > 0` the teacher's logits on the shard are computed once up front.
pub fn local_sgd<R: Rng + ?Sized>(
    layout: &Layout,
    w0: &ParamVector,
    shard: &[Example],
    training: &LocalTraining,
    teacher: Option<&ParamVector>,
    anchor: Option<&ParamVector>,
    rng: &mut R,
) -> Result<LocalOutcome> {
    if shard.is_empty() {
        return Err(SimError::Empty("client shard"));
    }
    if !(training.eta_l >= 0.0) || !training.eta_l.is_finite() {
        return Err(invalid("eta_l", "must be finite and >= 0"));
    }
    if training.batch_size == 0 {
        return Err(invalid("batch_size", "must be >= 1"));
    }
    let teacher_logits = match (training.rho > 0.0, teacher) {
        (true, Some(t)) => {
            let refs: Vec<&Example> = shard.iter().collect();
            Some(forward_batch(layout, t, &refs)?)
        }
        (true, None) => return Err(invalid("teacher", "required when rho > 0")),
        (false, _) => None,
    };
    let anchor = if training.nu > 0.0 {
        Some(anchor.ok_or_else(|| invalid("anchor", "required when nu > 0"))?)
    } else {
        None
    };

    let n = shard.len();
    let batch = training.batch_size.min(n);
    let total_steps = training.work.steps_for(n, batch);
    let mut w = w0.clone();
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut examples_processed = 0;
    let mut batch_refs: Vec<&Example> = Vec::with_capacity(batch);
    let mut batch_teacher: Vec<Vec<f64>> = Vec::with_capacity(batch);

    for _ in 0..total_steps {
        if cursor >= n {
            if batch < n {
                order.shuffle(rng);
            }
            cursor = 0;
        }
        let end = (cursor + batch).min(n);
        batch_refs.clear();
        batch_teacher.clear();
        for &i in &order[cursor..end] {
            batch_refs.push(&shard[i]);
            if let Some(t) = &teacher_logits {
                batch_teacher.push(t[i].clone());
            }
        }
        cursor = end;
        let reg = Regularization {
            teacher_logits: teacher_logits.as_ref().map(|_| batch_teacher.as_slice()),
            anchor,
            rho: training.rho,
            nu: training.nu,
            distill: training.distill,
        };
        let (_, g) = loss_and_grad(layout, &w, &batch_refs, &reg)?;
        if training.eta_l != 0.0 {
            w.axpy(-training.eta_l, &g);
        }
        examples_processed += batch_refs.len();
    }
    Ok(LocalOutcome {
        w,
        steps: total_steps,
        examples_processed,
    })
}

/// Index of the largest logit; ties resolve to the lowest class.
pub fn predict(logits: &[f64]) -> usize {
    let mut best = 0;
    for (k, v) in logits.iter().enumerate() {
        if *v > logits[best] {
            best = k;
        }
    }
    best
}

/// Fraction of examples whose predicted class equals the label.
pub fn accuracy(layout: &Layout, w: &ParamVector, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Err(SimError::Empty("evaluation set"));
    }
    layout.check_params(w)?;
    let mut correct = 0usize;
    for e in examples {
        layout.check_input(&e.features)?;
        if predict(&forward(layout, w.as_slice(), &e.features).logits) == e.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / examples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_examples(layout: &Layout, n: usize, r: &mut ChaCha8Rng) -> Vec<Example> {
        (0..n)
            .map(|_| Example {
                features: (0..layout.d_in).map(|_| r.sample(StandardNormal)).collect(),
                label: r.random_range(0..layout.n_classes),
            })
            .collect()
    }

    fn random_params(layout: &Layout, scale: f64, r: &mut ChaCha8Rng) -> ParamVector {
        (0..layout.n_params())
            .map(|_| scale * r.sample::<f64, _>(StandardNormal))
            .collect::<Vec<_>>()
            .into()
    }

    #[test]
    fn zero_weights_give_uniform_softmax() {
        let layout = Layout::mlp(3, 4, 5);
        let z = forward_logits(&layout, &ParamVector::zeros(layout.n_params()), &[1.0, -2.0, 0.5]).unwrap();
        assert!(z.iter().all(|v| *v == 0.0));
        assert!(softmax(&z).iter().all(|p| (p - 0.2).abs() < 1e-15));
    }

    #[test]
    fn linear_logits_match_naive_loop() {
        let layout = Layout::linear(4, 3);
        let mut r = rng(1);
        let w = random_params(&layout, 1.0, &mut r);
        let x: Vec<f64> = (0..4).map(|i| i as f64 - 1.5).collect();
        let z = forward_logits(&layout, &w, &x).unwrap();
        for k in 0..3 {
            let mut acc = w[3 * 4 + k];
            for j in 0..4 {
                acc += w[k * 4 + j] * x[j];
            }
            assert!((z[k] - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_of_one_matches_single_path() {
        let layout = Layout::mlp(3, 5, 4);
        let mut r = rng(2);
        let w = random_params(&layout, 0.7, &mut r);
        let ex = random_examples(&layout, 3, &mut r);
        let refs: Vec<&Example> = ex.iter().collect();
        let batched = forward_batch(&layout, &w, &refs).unwrap();
        assert_eq!(batched[0], forward_logits(&layout, &w, &ex[0].features).unwrap());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let layout = Layout::linear(3, 2);
        let w = ParamVector::zeros(layout.n_params());
        assert!(matches!(
            forward_logits(&layout, &w, &[1.0]),
            Err(SimError::DimensionMismatch { .. })
        ));
        assert!(forward_logits(&layout, &ParamVector::zeros(2), &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn unregularized_total_is_supervised() {
        let layout = Layout::linear(3, 4);
        let mut r = rng(3);
        let w = random_params(&layout, 0.5, &mut r);
        let ex = random_examples(&layout, 6, &mut r);
        let refs: Vec<&Example> = ex.iter().collect();
        let (loss, _) = loss_and_grad(&layout, &w, &refs, &Regularization::none()).unwrap();
        assert_eq!(loss.distill, 0.0);
        assert_eq!(loss.proximal, 0.0);
        assert_eq!(loss.total, loss.supervised);
    }

    #[test]
    fn self_distillation_equals_student_entropy() {
        let layout = Layout::mlp(3, 4, 5);
        let mut r = rng(4);
        let w = random_params(&layout, 0.8, &mut r);
        let ex = random_examples(&layout, 7, &mut r);
        let refs: Vec<&Example> = ex.iter().collect();
        let teacher = forward_batch(&layout, &w, &refs).unwrap();
        let reg = Regularization {
            teacher_logits: Some(&teacher),
            rho: 0.3,
            ..Regularization::none()
        };
        let (loss, _) = loss_and_grad(&layout, &w, &refs, &reg).unwrap();
        let entropy: f64 = teacher
            .iter()
            .map(|z| {
                let lp = log_softmax(z);
                -lp.iter().map(|l| l.exp() * l).sum::<f64>()
            })
            .sum::<f64>()
            / refs.len() as f64;
        assert!((loss.distill - entropy).abs() < 1e-12);
    }

    #[test]
    fn proximal_vanishes_at_anchor() {
        let layout = Layout::linear(2, 3);
        let mut r = rng(5);
        let w = random_params(&layout, 0.5, &mut r);
        let ex = random_examples(&layout, 4, &mut r);
        let refs: Vec<&Example> = ex.iter().collect();
        let reg = Regularization {
            anchor: Some(&w),
            nu: 0.7,
            ..Regularization::none()
        };
        let (with_prox, g1) = loss_and_grad(&layout, &w, &refs, &reg).unwrap();
        let (without, g0) = loss_and_grad(&layout, &w, &refs, &Regularization::none()).unwrap();
        assert_eq!(with_prox.proximal, 0.0);
        assert_eq!(with_prox.total, without.total);
        assert_eq!(g1, g0);
    }

    #[test]
    fn regularizer_presence_is_checked() {
        let layout = Layout::linear(2, 2);
        let w = ParamVector::zeros(layout.n_params());
        let ex = [Example { features: vec![1.0, 0.0], label: 0 }];
        let refs: Vec<&Example> = ex.iter().collect();
        let reg = Regularization { rho: 0.1, ..Regularization::none() };
        assert!(loss_and_grad(&layout, &w, &refs, &reg).is_err());
        let reg = Regularization { nu: 0.1, ..Regularization::none() };
        assert!(loss_and_grad(&layout, &w, &refs, &reg).is_err());
        assert!(loss_and_grad(&layout, &w, &[], &Regularization::none()).is_err());
    }

    #[test]
    fn non_finite_inputs_rejected() {
        let layout = Layout::linear(2, 2);
        let w = ParamVector::zeros(layout.n_params());
        let ex = [Example { features: vec![f64::NAN, 0.0], label: 0 }];
        let refs: Vec<&Example> = ex.iter().collect();
        let err = loss_and_grad(&layout, &w, &refs, &Regularization::none()).unwrap_err();
        assert!(matches!(err, SimError::NonFinite(ref m) if m.contains("features")));
    }

    #[test]
    fn large_logits_stay_finite() {
        let layout = Layout::linear(1, 3);
        let w = ParamVector::from_vec(vec![1000.0, -1000.0, 500.0, 0.0, 0.0, 0.0]);
        let ex = [Example { features: vec![1.0], label: 1 }];
        let refs: Vec<&Example> = ex.iter().collect();
        let (loss, g) = loss_and_grad(&layout, &w, &refs, &Regularization::none()).unwrap();
        assert!((loss.supervised - 2000.0).abs() < 1e-9);
        assert!(g.is_finite());
    }

    #[test]
    fn one_full_batch_step_is_plain_gradient_step() {
        let layout = Layout::linear(3, 3);
        let mut r = rng(6);
        let w0 = random_params(&layout, 0.3, &mut r);
        let ex = random_examples(&layout, 5, &mut r);
        let training = LocalTraining {
            work: LocalWork::Steps(1),
            batch_size: 5,
            eta_l: 0.2,
            rho: 0.0,
            nu: 0.0,
            distill: DistillConfig::default(),
        };
        let out = local_sgd(&layout, &w0, &ex, &training, None, None, &mut r).unwrap();
        let refs: Vec<&Example> = ex.iter().collect();
        let (_, g) = loss_and_grad(&layout, &w0, &refs, &Regularization::none()).unwrap();
        let mut expected = w0.clone();
        expected.axpy(-0.2, &g);
        assert_eq!(out.w, expected);
        assert_eq!(out.steps, 1);
        assert_eq!(out.examples_processed, 5);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let layout = Layout::mlp(2, 3, 2);
        let mut r = rng(7);
        let w0 = random_params(&layout, 0.3, &mut r);
        let ex = random_examples(&layout, 9, &mut r);
        let training = LocalTraining {
            work: LocalWork::Epochs(2),
            batch_size: 4,
            eta_l: 0.0,
            rho: 0.0,
            nu: 0.0,
            distill: DistillConfig::default(),
        };
        let out = local_sgd(&layout, &w0, &ex, &training, None, None, &mut r).unwrap();
        assert_eq!(out.w, w0);
        assert_eq!(out.steps, 6);
        assert_eq!(out.examples_processed, 18);
    }

    #[test]
    fn repeated_example_matches_scalar_loop() {
        // Binary linear model, d_in = 1, every example (x = 0.7, y = 1).
        let layout = Layout::linear(1, 2);
        let ex = vec![Example { features: vec![0.7], label: 1 }; 6];
        let w0 = ParamVector::from_vec(vec![0.1, -0.2, 0.05, 0.0]);
        let training = LocalTraining {
            work: LocalWork::Steps(13),
            batch_size: 4,
            eta_l: 0.3,
            rho: 0.0,
            nu: 0.0,
            distill: DistillConfig::default(),
        };
        let out = local_sgd(&layout, &w0, &ex, &training, None, None, &mut rng(8)).unwrap();

        let (mut w00, mut w10, mut b0, mut b1) = (0.1f64, -0.2f64, 0.05f64, 0.0f64);
        let x = 0.7;
        for _ in 0..13 {
            let z0 = w00 * x + b0;
            let z1 = w10 * x + b1;
            let m = z0.max(z1);
            let e0 = (z0 - m).exp();
            let e1 = (z1 - m).exp();
            let p0 = e0 / (e0 + e1);
            let p1 = e1 / (e0 + e1);
            let (d0, d1) = (p0, p1 - 1.0);
            w00 -= 0.3 * d0 * x;
            w10 -= 0.3 * d1 * x;
            b0 -= 0.3 * d0;
            b1 -= 0.3 * d1;
        }
        let expected = [w00, w10, b0, b1];
        for (a, b) in out.w.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn empty_shard_rejected() {
        let layout = Layout::linear(1, 2);
        let training = LocalTraining {
            work: LocalWork::Steps(1),
            batch_size: 1,
            eta_l: 0.1,
            rho: 0.0,
            nu: 0.0,
            distill: DistillConfig::default(),
        };
        let w0 = ParamVector::zeros(layout.n_params());
        assert!(local_sgd(&layout, &w0, &[], &training, None, None, &mut rng(1)).is_err());
    }

    #[test]
    fn accuracy_tie_rule_and_fixtures() {
        let layout = Layout::linear(2, 2);
        let zero = ParamVector::zeros(layout.n_params());
        let ex = vec![
            Example { features: vec![1.0, 0.0], label: 0 },
            Example { features: vec![0.0, 1.0], label: 1 },
            Example { features: vec![2.0, 0.0], label: 0 },
            Example { features: vec![0.0, 3.0], label: 1 },
        ];
        // all-zero weights predict class 0 everywhere
        assert_eq!(accuracy(&layout, &zero, &ex).unwrap(), 0.5);
        // W = identity separates perfectly
        let ident = ParamVector::from_vec(vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(accuracy(&layout, &ident, &ex).unwrap(), 1.0);
        assert_eq!(accuracy(&layout, &ident, &ex[..1]).unwrap(), 1.0);
        assert!(accuracy(&layout, &ident, &[]).is_err());
    }

    #[test]
    fn zero_model_balanced_eval_near_half() {
        let layout = Layout::linear(3, 2);
        let mut r = rng(10);
        let ex = random_examples(&layout, 1000, &mut r);
        let acc = accuracy(&layout, &ParamVector::zeros(layout.n_params()), &ex).unwrap();
        let class0 = ex.iter().filter(|e| e.label == 0).count() as f64 / 1000.0;
        assert_eq!(acc, class0);
        assert!((acc - 0.5).abs() <= 3.0 * (0.25f64 / 1000.0).sqrt());
    }
}
