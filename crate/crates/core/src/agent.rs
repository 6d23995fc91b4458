//! Per-agent local update rules: Lagrangian cost, critic TD step, dual
//! critic, advantage and actor step, multiplier step.

use serde::{Deserialize, Serialize};

use crate::cmg::{JointAction, JointActionSpace};
use crate::error::{Error, Result};
use crate::fa::{dot, FeatureTable};

/// Everything an agent carries between iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub theta: Vec<f64>,
    pub w: Vec<f64>,
    /// Running Lagrangian average `L_hat`.
    pub avg_cost: f64,
    /// Constraint estimate `G_hat`, one entry per constraint.
    pub g_hat: Vec<f64>,
    /// Local multipliers `lambda_hat`, inside `[0, lambda_max]`.
    pub lambda_hat: Vec<f64>,
}

impl AgentState {
    pub fn zeros(policy_dim: usize, critic_dim: usize, num_constraints: usize) -> Self {
        Self {
            theta: vec![0.0; policy_dim],
            w: vec![0.0; critic_dim],
            avg_cost: 0.0,
            g_hat: vec![0.0; num_constraints],
            lambda_hat: vec![0.0; num_constraints],
        }
    }

    /// Name of the first non-finite field, if any.
    pub fn non_finite_field(&self) -> Option<&'static str> {
        let bad = |v: &[f64]| v.iter().any(|x| !x.is_finite());
        if bad(&self.theta) {
            Some("theta")
        } else if bad(&self.w) {
            Some("w")
        } else if !self.avg_cost.is_finite() {
            Some("avg_cost")
        } else if bad(&self.g_hat) {
            Some("g_hat")
        } else if bad(&self.lambda_hat) {
            Some("lambda_hat")
        } else {
            None
        }
    }

    pub fn check_finite(&self, agent: usize, step: u64) -> Result<()> {
        match self.non_finite_field() {
            Some(field) => Err(Error::NonFinite {
                what: format!("agent {agent} {field}"),
                step,
            }),
            None => Ok(()),
        }
    }
}

/// `l = c + lambda_hat . (g - b)`. Returns `c` unchanged when there are no
/// constraints.
pub fn local_lagrangian_cost(c: f64, g: &[f64], lambda_hat: &[f64], b: &[f64]) -> f64 {
    g.iter()
        .zip(b)
        .zip(lambda_hat)
        .fold(c, |acc, ((g, b), l)| acc + l * (g - b))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticStep {
    pub avg_cost: f64,
    /// Weights before gossip.
    pub w_tilde: Vec<f64>,
    pub td_error: f64,
}

/// `L_hat + alpha (l - L_hat)`
pub fn average_cost_update(avg_cost: f64, l: f64, alpha: f64) -> f64 {
    avg_cost + alpha * (l - avg_cost)
}

/// `l - L_hat + phi_next . w - phi_cur . w`
pub fn td_error(w: &[f64], avg_cost: f64, l: f64, phi_cur: &[f64], phi_next: &[f64]) -> f64 {
    l - avg_cost + dot(phi_next, w) - dot(phi_cur, w)
}

/// `w + alpha * delta * phi_cur`
pub fn critic_step(w: &[f64], td_error: f64, phi_cur: &[f64], alpha: f64) -> Vec<f64> {
    w.iter().zip(phi_cur).map(|(w, f)| w + alpha * td_error * f).collect()
}

/// One TD(0) step. `delta` uses the average *before* this step's update.
pub fn critic_update(
    w: &[f64],
    avg_cost: f64,
    l: f64,
    phi_cur: &[f64],
    phi_next: &[f64],
    alpha: f64,
) -> CriticStep {
    let td_error = td_error(w, avg_cost, l, phi_cur, phi_next);
    CriticStep {
        avg_cost: average_cost_update(avg_cost, l, alpha),
        w_tilde: critic_step(w, td_error, phi_cur, alpha),
        td_error,
    }
}

/// `G_hat + alpha (g - G_hat)`
pub fn dual_critic_update(g_hat: &[f64], g: &[f64], alpha: f64) -> Vec<f64> {
    g_hat.iter().zip(g).map(|(h, g)| h + alpha * (g - h)).collect()
}

/// `A_n = Q(s, a) - sum_b pi_n(b | .) Q(s, (b, a_-n))` for a linear critic.
///
/// `own_probs` is agent `agent`'s action distribution; only its own action
/// is varied, the others stay at `joint`.
pub fn advantage(
    critic: &FeatureTable,
    w: &[f64],
    space: &JointActionSpace,
    state: usize,
    joint: &JointAction,
    agent: usize,
    own_probs: &[f64],
) -> Result<f64> {
    let size = space.size();
    let base = space.encode(joint)? - joint.0[agent] * space.stride(agent);
    let q = |b: usize| critic.dot(state * size + base + b * space.stride(agent), w);
    let baseline: f64 = own_probs.iter().enumerate().map(|(b, p)| p * q(b)).sum();
    Ok(q(joint.0[agent]) - baseline)
}

/// `clip(theta - beta * A * psi, -theta_max, theta_max)`
pub fn actor_update(theta: &[f64], advantage: f64, score: &[f64], beta: f64, theta_max: f64) -> Vec<f64> {
    theta
        .iter()
        .zip(score)
        .map(|(t, s)| (t - beta * advantage * s).clamp(-theta_max, theta_max))
        .collect()
}

/// `clip(mixed + gamma (G_hat - b), 0, lambda_max)` componentwise.
pub fn dual_update(mixed_lambda: &[f64], g_hat: &[f64], gamma: f64, b: &[f64], lambda_max: &[f64]) -> Vec<f64> {
    mixed_lambda
        .iter()
        .zip(g_hat)
        .zip(b)
        .zip(lambda_max)
        .map(|(((m, g), b), hi)| (m + gamma * (g - b)).clamp(0.0, *hi))
        .collect()
}
