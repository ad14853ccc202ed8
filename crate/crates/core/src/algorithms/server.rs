use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, SimError};
use crate::params::ParamVector;

/// Rule used to turn the averaged client delta into a global step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ServerOptimizer {
    Sgd,
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.99
}

fn default_eps() -> f64 {
    1e-4
}

impl ServerOptimizer {
    pub fn adam_default() -> Self {
        ServerOptimizer::Adam {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let ServerOptimizer::Adam { beta1, beta2, eps } = *self {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
                return Err(invalid("server_optimizer", "Adam betas must lie in [0, 1)"));
            }
            if !(eps > 0.0) {
                return Err(invalid("server_optimizer", "Adam eps must be > 0"));
            }
        }
        Ok(())
    }
}

/// Exponential moving average of model weights, initialized to the first
/// value it sees and never bias-corrected.
#[derive(Debug, Clone, PartialEq)]
pub struct Ema {
    pub beta: f64,
    pub value: Option<ParamVector>,
}

impl Ema {
    pub fn new(beta: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&beta) {
            return Err(invalid("beta", format!("{beta} not in [0, 1)")));
        }
        Ok(Self { beta, value: None })
    }

    pub fn update(&mut self, w: &ParamVector) {
        self.value = Some(ema_update(self.value.take(), w, self.beta));
    }
}

/// `beta * acc + (1 - beta) * w`, or `w` when the accumulator is empty.
pub fn ema_update(acc: Option<ParamVector>, w: &ParamVector, beta: f64) -> ParamVector {
    match acc {
        None => w.clone(),
        Some(mut acc) => {
            for (a, x) in acc.as_mut_slice().iter_mut().zip(w.iter()) {
                *a = beta * *a + (1.0 - beta) * x;
            }
            acc
        }
    }
}

/// Global model plus optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub w: ParamVector,
    /// Number of server steps applied so far.
    pub t: u64,
    pub optimizer: ServerOptimizer,
    m: Option<ParamVector>,
    v: Option<ParamVector>,
}

impl ServerState {
    pub fn new(w: ParamVector, optimizer: ServerOptimizer) -> Self {
        Self {
            w,
            t: 0,
            optimizer,
            m: None,
            v: None,
        }
    }

    /// First and second moments; `None` until the first Adam step.
    pub fn moments(&self) -> Option<(&ParamVector, &ParamVector)> {
        self.m.as_ref().zip(self.v.as_ref())
    }

    /// Apply `summed_delta / count` as a pseudo-gradient.
    ///
    /// SGD: `w -= eta_g * g`. Adam: `m = b1 m + (1-b1) g`,
    /// `v = b2 v + (1-b2) g^2`, `w -= eta_g * m / (sqrt(v) + eps)`.
    pub fn apply(&mut self, summed_delta: &ParamVector, count: usize, eta_g: f64) -> Result<()> {
        if count == 0 {
            return Err(invalid("count", "server update needs at least one client delta"));
        }
        if summed_delta.len() != self.w.len() {
            return Err(SimError::DimensionMismatch {
                context: "server delta",
                expected: self.w.len(),
                actual: summed_delta.len(),
            });
        }
        if !summed_delta.is_finite() {
            return Err(SimError::NonFinite("summed client delta".into()));
        }
        let inv = 1.0 / count as f64;
        match self.optimizer {
            ServerOptimizer::Sgd => self.w.axpy(-eta_g * inv, summed_delta),
            ServerOptimizer::Adam { beta1, beta2, eps } => {
                let d = self.w.len();
                let m = self.m.get_or_insert_with(|| ParamVector::zeros(d));
                let v = self.v.get_or_insert_with(|| ParamVector::zeros(d));
                let w = self.w.as_mut_slice();
                for i in 0..d {
                    let g = summed_delta[i] * inv;
                    m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                    v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                    w[i] -= eta_g * m[i] / (v[i].sqrt() + eps);
                }
            }
        }
        if !self.w.is_finite() {
            return Err(SimError::NonFinite(format!("global model after step {}", self.t + 1)));
        }
        self.t += 1;
        Ok(())
    }
}
