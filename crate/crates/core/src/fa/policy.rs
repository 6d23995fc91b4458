use std::sync::Arc;

use crate::cmg::{sample_categorical, SimRng};
use crate::error::{Error, Result};
use crate::fa::features::{dot, FeatureTable};

/// Softmax-linear policy `pi(a | s) ∝ exp(theta . f(s, a))` over one agent's
/// own actions, with parameters confined to the box `[-theta_max, theta_max]`.
#[derive(Debug, Clone)]
pub struct SoftmaxPolicy {
    features: Arc<FeatureTable>,
    num_actions: usize,
    pub theta: Vec<f64>,
    pub theta_max: f64,
}

impl SoftmaxPolicy {
    pub fn new(features: Arc<FeatureTable>, num_actions: usize, theta: Vec<f64>, theta_max: f64) -> Result<Self> {
        if num_actions == 0 || features.rows() % num_actions != 0 {
            return Err(Error::config(format!(
                "policy feature table has {} rows, not a multiple of {num_actions} actions",
                features.rows()
            )));
        }
        if theta.len() != features.dim() {
            return Err(Error::shape("policy parameters", features.dim(), theta.len()));
        }
        if !(theta_max > 0.0) {
            return Err(Error::config("theta_max must be positive"));
        }
        Ok(Self {
            features,
            num_actions,
            theta,
            theta_max,
        })
    }

    pub fn features(&self) -> &Arc<FeatureTable> {
        &self.features
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn num_states(&self) -> usize {
        self.features.rows() / self.num_actions
    }

    pub fn probs(&self, s: usize) -> Vec<f64> {
        probs(&self.features, &self.theta, self.num_actions, s)
    }

    pub fn log_probs(&self, s: usize) -> Vec<f64> {
        log_probs(&self.features, &self.theta, self.num_actions, s)
    }

    pub fn score(&self, s: usize, a: usize) -> Vec<f64> {
        score(&self.features, &self.theta, self.num_actions, s, a)
    }

    pub fn sample_action(&self, s: usize, rng: &mut SimRng) -> usize {
        sample_categorical(&self.probs(s), rng)
    }

    /// Set the parameters, clamped to the box.
    pub fn set_theta(&mut self, theta: &[f64]) {
        self.theta = theta
            .iter()
            .map(|v| v.clamp(-self.theta_max, self.theta_max))
            .collect();
    }
}

pub(crate) fn logits(features: &FeatureTable, theta: &[f64], num_actions: usize, s: usize) -> Vec<f64> {
    (0..num_actions)
        .map(|a| dot(&features.row(s * num_actions + a), theta))
        .collect()
}

/// Action probabilities at `s`, computed with max-subtraction.
pub fn probs(features: &FeatureTable, theta: &[f64], num_actions: usize, s: usize) -> Vec<f64> {
    let z = logits(features, theta, num_actions, s);
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

/// `log pi(. | s)` via log-sum-exp, not via `ln(probs)`.
pub fn log_probs(features: &FeatureTable, theta: &[f64], num_actions: usize, s: usize) -> Vec<f64> {
    let z = logits(features, theta, num_actions, s);
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.into_iter().map(|v| v - lse).collect()
}

/// Score `grad_theta log pi(a | s) = f(s, a) - sum_a' pi(a' | s) f(s, a')`.
pub fn score(features: &FeatureTable, theta: &[f64], num_actions: usize, s: usize, a: usize) -> Vec<f64> {
    let p = probs(features, theta, num_actions, s);
    score_with_probs(features, &p, num_actions, s, a)
}

pub(crate) fn score_with_probs(
    features: &FeatureTable,
    probs: &[f64],
    num_actions: usize,
    s: usize,
    a: usize,
) -> Vec<f64> {
    let mut out = features.row(s * num_actions + a).into_owned();
    for (b, &pb) in probs.iter().enumerate() {
        let row = features.row(s * num_actions + b);
        for (o, f) in out.iter_mut().zip(row.iter()) {
            *o -= pb * f;
        }
    }
    out
}
