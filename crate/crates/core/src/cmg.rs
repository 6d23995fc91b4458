//! Constrained Markov game data model and sampling primitives.
//!
//! Joint actions are stored flattened with a mixed-radix encoding in which
//! agent 0 is the most significant digit: for action counts `[A0, A1, A2]`
//! the joint action `(a0, a1, a2)` maps to `(a0 * A1 + a1) * A2 + a2`.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph;

/// Random stream used by every sampler in the crate.
pub type SimRng = ChaCha8Rng;

/// Independent, reproducible stream `stream` of the generator seeded by `seed`.
pub fn rng_stream(seed: u64, stream: u64) -> SimRng {
    let mut rng = SimRng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Tolerance on transition row sums.
pub const ROW_SUM_TOL: f64 = 1e-10;

/// Mixed-radix index space of joint actions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointActionSpace {
    radices: Vec<usize>,
    strides: Vec<usize>,
    size: usize,
}

impl JointActionSpace {
    pub fn new(actions_per_agent: &[usize]) -> Result<Self> {
        if actions_per_agent.is_empty() {
            return Err(Error::config("at least one agent is required"));
        }
        if actions_per_agent.contains(&0) {
            return Err(Error::config("every agent needs at least one action"));
        }
        let mut strides = vec![1usize; actions_per_agent.len()];
        let mut size = 1usize;
        for (i, &r) in actions_per_agent.iter().enumerate().rev() {
            strides[i] = size;
            size = size
                .checked_mul(r)
                .ok_or_else(|| Error::config("joint action space overflows usize"))?;
        }
        Ok(Self {
            radices: actions_per_agent.to_vec(),
            strides,
            size,
        })
    }

    pub fn num_agents(&self) -> usize {
        self.radices.len()
    }

    pub fn radices(&self) -> &[usize] {
        &self.radices
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Weight of agent `agent`'s digit in the flattened index.
    pub fn stride(&self, agent: usize) -> usize {
        self.strides[agent]
    }

    pub fn encode(&self, action: &JointAction) -> Result<usize> {
        self.check(action)?;
        Ok(action
            .0
            .iter()
            .zip(&self.strides)
            .map(|(a, s)| a * s)
            .sum())
    }

    pub fn decode(&self, mut index: usize) -> Result<JointAction> {
        if index >= self.size {
            return Err(Error::Index {
                what: "joint action",
                index,
                limit: self.size,
            });
        }
        let mut out = vec![0; self.radices.len()];
        for (i, &s) in self.strides.iter().enumerate() {
            out[i] = index / s;
            index %= s;
        }
        Ok(JointAction(out))
    }

    pub fn check(&self, action: &JointAction) -> Result<()> {
        if action.0.len() != self.radices.len() {
            return Err(Error::shape("joint action", self.radices.len(), action.0.len()));
        }
        for (&a, &r) in action.0.iter().zip(&self.radices) {
            if a >= r {
                return Err(Error::Index {
                    what: "agent action",
                    index: a,
                    limit: r,
                });
            }
        }
        Ok(())
    }
}

/// Per-agent action indices `(a_0, ..., a_{N-1})`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct JointAction(pub Vec<usize>);

impl JointAction {
    pub fn get(&self, agent: usize) -> usize {
        self.0[agent]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Copy with agent `agent`'s action replaced by `action`.
    pub fn with(&self, agent: usize, action: usize) -> JointAction {
        let mut v = self.0.clone();
        v[agent] = action;
        JointAction(v)
    }
}

/// Result of one environment step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub next_state: usize,
    /// `c_n^{t+1}` for every agent.
    pub costs: Vec<f64>,
    /// `g_n^{t+1}` for every agent, each of length K.
    pub constraint_costs: Vec<Vec<f64>>,
}

/// Anything the trainer can step: a materialized [`TabularCmg`] or a lazily
/// sampled environment with the same interface.
pub trait Environment: Send + Sync {
    fn num_states(&self) -> usize;
    fn action_space(&self) -> &JointActionSpace;
    fn num_constraints(&self) -> usize;
    fn bounds(&self) -> &[f64];

    fn num_agents(&self) -> usize {
        self.action_space().num_agents()
    }

    /// Sample `(s', c^{t+1}, g^{t+1})` for the pair `(s, a)`.
    fn step(&self, state: usize, action: &JointAction, rng: &mut SimRng) -> Result<StageOutcome>;
}

/// Draw an index from a probability vector by inversion.
pub fn sample_categorical(probs: &[f64], rng: &mut SimRng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    // u landed in the rounding slack above the accumulated sum
    last_positive
}

/// Add independent uniform `[-amp, amp]` noise to every cost, agents first,
/// then every (agent, constraint) pair. Draws nothing when `amp == 0`.
pub(crate) fn add_cost_noise(
    amp: f64,
    costs: &mut [f64],
    constraint_costs: &mut [Vec<f64>],
    rng: &mut SimRng,
) {
    if amp <= 0.0 {
        return;
    }
    for c in costs.iter_mut() {
        *c += rng.gen_range(-amp..=amp);
    }
    for g in constraint_costs.iter_mut().flat_map(|v| v.iter_mut()) {
        *g += rng.gen_range(-amp..=amp);
    }
}

/// Problems found by [`TabularCmg::validate`].
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValidationIssue {
    Shape {
        what: String,
        expected: usize,
        found: usize,
    },
    RowSum {
        state: usize,
        joint_action: usize,
        sum: f64,
    },
    NegativeProbability {
        state: usize,
        joint_action: usize,
        next_state: usize,
        value: f64,
    },
    NonFinite {
        what: String,
        index: usize,
    },
    /// States outside the communicating class of state 0 under the uniform policy.
    Reducible { outside_class: Vec<usize> },
    Periodic { period: usize },
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationIssue::Shape {
                what,
                expected,
                found,
            } => write!(f, "{what}: expected length {expected}, found {found}"),
            ValidationIssue::RowSum {
                state,
                joint_action,
                sum,
            } => write!(
                f,
                "transition row (s={state}, a={joint_action}) sums to {sum}"
            ),
            ValidationIssue::NegativeProbability {
                state,
                joint_action,
                next_state,
                value,
            } => write!(
                f,
                "P({next_state} | s={state}, a={joint_action}) = {value} is negative"
            ),
            ValidationIssue::NonFinite { what, index } => {
                write!(f, "{what}[{index}] is not finite")
            }
            ValidationIssue::Reducible { outside_class } => write!(
                f,
                "state graph under the uniform policy is not strongly connected; \
                 states outside the class of state 0: {outside_class:?}"
            ),
            ValidationIssue::Periodic { period } => {
                write!(f, "state graph under the uniform policy has period {period}")
            }
        }
    }
}

/// Structured outcome of validation. `errors` make the instance unusable;
/// `warnings` flag (without proving) violations of the ergodicity assumption.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub errors: Vec<ValidationIssue>,
    pub warnings: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn is_clean(&self) -> bool {
        self.errors.is_empty() && self.warnings.is_empty()
    }
}

/// Fully materialized constrained Markov game.
///
/// Storage layouts (all row-major, joint actions flattened):
/// `transition[s][a][s']`, `cost[n][s][a]`, `constraint_cost[n][k][s][a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularCmg {
    num_states: usize,
    space: JointActionSpace,
    num_constraints: usize,
    transition: Vec<f64>,
    cost: Vec<f64>,
    constraint_cost: Vec<f64>,
    bounds: Vec<f64>,
    cost_noise: f64,
}

/// Owned parts of a [`TabularCmg`], in the flat layouts documented there.
#[derive(Debug, Clone)]
pub struct TabularParts {
    pub num_states: usize,
    pub actions_per_agent: Vec<usize>,
    pub transition: Vec<f64>,
    pub cost: Vec<f64>,
    pub constraint_cost: Vec<f64>,
    pub bounds: Vec<f64>,
    pub cost_noise: f64,
}

impl TabularCmg {
    /// Build and validate. Fails on any validation error; warnings are
    /// available through [`TabularCmg::validate`].
    pub fn new(parts: TabularParts) -> Result<Self> {
        let cmg = Self::from_parts_unchecked(parts)?;
        let report = cmg.validate();
        if let Some(first) = report.errors.first() {
            return Err(Error::config(format!(
                "invalid CMG ({} problems), first: {first}",
                report.errors.len()
            )));
        }
        Ok(cmg)
    }

    /// Build without checking probabilities or table lengths. Only the joint
    /// action space must be well formed.
    pub fn from_parts_unchecked(parts: TabularParts) -> Result<Self> {
        let space = JointActionSpace::new(&parts.actions_per_agent)?;
        if parts.num_states == 0 {
            return Err(Error::config("at least one state is required"));
        }
        Ok(Self {
            num_states: parts.num_states,
            num_constraints: parts.bounds.len(),
            space,
            transition: parts.transition,
            cost: parts.cost,
            constraint_cost: parts.constraint_cost,
            bounds: parts.bounds,
            cost_noise: parts.cost_noise,
        })
    }

    pub fn into_parts(self) -> TabularParts {
        TabularParts {
            num_states: self.num_states,
            actions_per_agent: self.space.radices().to_vec(),
            transition: self.transition,
            cost: self.cost,
            constraint_cost: self.constraint_cost,
            bounds: self.bounds,
            cost_noise: self.cost_noise,
        }
    }

    pub fn num_joint_actions(&self) -> usize {
        self.space.size()
    }

    pub fn num_pairs(&self) -> usize {
        self.num_states * self.space.size()
    }

    pub fn cost_noise(&self) -> f64 {
        self.cost_noise
    }

    pub fn with_cost_noise(mut self, amp: f64) -> Result<Self> {
        if !(amp >= 0.0 && amp.is_finite()) {
            return Err(Error::config(format!("cost noise must be finite and >= 0, got {amp}")));
        }
        self.cost_noise = amp;
        Ok(self)
    }

    fn check_state(&self, s: usize) -> Result<()> {
        if s >= self.num_states {
            return Err(Error::Index {
                what: "state",
                index: s,
                limit: self.num_states,
            });
        }
        Ok(())
    }

    /// `P(. | s, a)` for the flattened joint action `ja`.
    pub fn transition_row(&self, s: usize, ja: usize) -> &[f64] {
        let n = self.num_states;
        let start = (s * self.space.size() + ja) * n;
        &self.transition[start..start + n]
    }

    pub fn cost(&self, agent: usize, s: usize, ja: usize) -> f64 {
        self.cost[(agent * self.num_states + s) * self.space.size() + ja]
    }

    pub fn constraint_cost(&self, agent: usize, k: usize, s: usize, ja: usize) -> f64 {
        let idx = ((agent * self.num_constraints + k) * self.num_states + s) * self.space.size() + ja;
        self.constraint_cost[idx]
    }

    /// Agent-averaged cost `c(s, a) = (1/N) sum_n c_n(s, a)`.
    pub fn mean_cost(&self, s: usize, ja: usize) -> f64 {
        let n = self.num_agents();
        (0..n).map(|i| self.cost(i, s, ja)).sum::<f64>() / n as f64
    }

    /// Agent-averaged constraint cost `g_k(s, a)`.
    pub fn mean_constraint_cost(&self, k: usize, s: usize, ja: usize) -> f64 {
        let n = self.num_agents();
        (0..n).map(|i| self.constraint_cost(i, k, s, ja)).sum::<f64>() / n as f64
    }

    /// Draw the next state from `P(. | s, a)`.
    pub fn sample_transition(&self, s: usize, action: &JointAction, rng: &mut SimRng) -> Result<usize> {
        self.check_state(s)?;
        let ja = self.space.encode(action)?;
        Ok(sample_categorical(self.transition_row(s, ja), rng))
    }

    /// Immediate costs at `(s, a)`: table values plus independent
    /// uniform noise of amplitude `cost_noise`.
    pub fn immediate_costs(
        &self,
        s: usize,
        action: &JointAction,
        rng: &mut SimRng,
    ) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        self.check_state(s)?;
        let ja = self.space.encode(action)?;
        let n = self.num_agents();
        let mut costs: Vec<f64> = (0..n).map(|i| self.cost(i, s, ja)).collect();
        let mut cons: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..self.num_constraints)
                    .map(|k| self.constraint_cost(i, k, s, ja))
                    .collect()
            })
            .collect();
        add_cost_noise(self.cost_noise, &mut costs, &mut cons, rng);
        Ok((costs, cons))
    }

    /// Check shapes, probabilities and finiteness; flag reducibility and
    /// periodicity of the state graph under the uniform joint policy.
    /// Never fails: every problem is returned in the report.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let (ns, na, nn, nk) = (
            self.num_states,
            self.space.size(),
            self.num_agents(),
            self.num_constraints,
        );
        let shapes = [
            ("transition", ns * na * ns, self.transition.len()),
            ("cost", nn * ns * na, self.cost.len()),
            ("constraint_cost", nn * nk * ns * na, self.constraint_cost.len()),
        ];
        for (what, expected, found) in shapes {
            if expected != found {
                report.errors.push(ValidationIssue::Shape {
                    what: what.to_string(),
                    expected,
                    found,
                });
            }
        }
        if !report.errors.is_empty() {
            return report;
        }
        for (what, table) in [
            ("cost", &self.cost),
            ("constraint_cost", &self.constraint_cost),
            ("bounds", &self.bounds),
        ] {
            if let Some(index) = table.iter().position(|v| !v.is_finite()) {
                report.errors.push(ValidationIssue::NonFinite {
                    what: what.to_string(),
                    index,
                });
            }
        }
        if !(self.cost_noise >= 0.0 && self.cost_noise.is_finite()) {
            report.errors.push(ValidationIssue::NonFinite {
                what: "cost_noise".to_string(),
                index: 0,
            });
        }

        let mut adjacency = vec![Vec::new(); ns];
        for s in 0..ns {
            let mut reach = vec![false; ns];
            for ja in 0..na {
                let row = self.transition_row(s, ja);
                let mut sum = 0.0;
                for (next, &p) in row.iter().enumerate() {
                    if !p.is_finite() {
                        report.errors.push(ValidationIssue::NonFinite {
                            what: "transition".to_string(),
                            index: (s * na + ja) * ns + next,
                        });
                    } else if p < 0.0 {
                        report.errors.push(ValidationIssue::NegativeProbability {
                            state: s,
                            joint_action: ja,
                            next_state: next,
                            value: p,
                        });
                    } else if p > 0.0 {
                        reach[next] = true;
                    }
                    sum += p;
                }
                if !((sum - 1.0).abs() <= ROW_SUM_TOL) {
                    report.errors.push(ValidationIssue::RowSum {
                        state: s,
                        joint_action: ja,
                        sum,
                    });
                }
            }
            adjacency[s] = (0..ns).filter(|&j| reach[j]).collect();
        }

        let outside = graph::outside_class_of_zero(&adjacency);
        if !outside.is_empty() {
            report.warnings.push(ValidationIssue::Reducible {
                outside_class: outside,
            });
        } else {
            let period = graph::period(&adjacency);
            if period > 1 {
                report.warnings.push(ValidationIssue::Periodic { period });
            }
        }
        report
    }

    /// Affinely rescale costs into `[0, 1]`: one map for all objective costs,
    /// one map per constraint shared across agents (bounds mapped with it).
    pub fn normalized(&self) -> Result<Self> {
        let mut out = self.clone();
        let (lo, hi) = min_max(self.cost.iter().copied());
        affine_into_unit(&mut out.cost, lo, hi);
        let block = self.num_states * self.space.size();
        for k in 0..self.num_constraints {
            let indices: Vec<usize> = (0..self.num_agents())
                .flat_map(|n| {
                    let start = (n * self.num_constraints + k) * block;
                    start..start + block
                })
                .collect();
            let (lo, hi) = min_max(indices.iter().map(|&i| self.constraint_cost[i]));
            let scale = if hi > lo { hi - lo } else { 1.0 };
            for &i in &indices {
                out.constraint_cost[i] = (self.constraint_cost[i] - lo) / scale;
            }
            out.bounds[k] = (self.bounds[k] - lo) / scale;
        }
        Ok(out)
    }

    pub fn to_file_repr(&self) -> TabularCmgFile {
        let (ns, na, nk) = (self.num_states, self.space.size(), self.num_constraints);
        TabularCmgFile {
            format: TABULAR_FORMAT.to_string(),
            num_agents: self.num_agents(),
            num_states: ns,
            actions_per_agent: self.space.radices().to_vec(),
            num_constraints: nk,
            joint_action_order: JOINT_ORDER.to_string(),
            transition: (0..ns)
                .map(|s| (0..na).map(|a| self.transition_row(s, a).to_vec()).collect())
                .collect(),
            cost: (0..self.num_agents())
                .map(|n| {
                    (0..ns)
                        .map(|s| (0..na).map(|a| self.cost(n, s, a)).collect())
                        .collect()
                })
                .collect(),
            constraint_cost: (0..self.num_agents())
                .map(|n| {
                    (0..nk)
                        .map(|k| {
                            (0..ns)
                                .map(|s| (0..na).map(|a| self.constraint_cost(n, k, s, a)).collect())
                                .collect()
                        })
                        .collect()
                })
                .collect(),
            bounds: self.bounds.clone(),
            cost_noise: self.cost_noise,
        }
    }

    pub fn from_file_repr(file: TabularCmgFile) -> Result<Self> {
        if file.format != TABULAR_FORMAT {
            return Err(Error::config(format!(
                "unsupported CMG format '{}', expected '{TABULAR_FORMAT}'",
                file.format
            )));
        }
        let check = |what: &str, expected: usize, found: usize| -> Result<()> {
            if expected == found {
                Ok(())
            } else {
                Err(Error::shape(what, expected, found))
            }
        };
        check("actions_per_agent", file.num_agents, file.actions_per_agent.len())?;
        check("bounds", file.num_constraints, file.bounds.len())?;
        check("transition (states)", file.num_states, file.transition.len())?;
        check("cost (agents)", file.num_agents, file.cost.len())?;
        check("constraint_cost (agents)", file.num_agents, file.constraint_cost.len())?;
        for per_agent in &file.constraint_cost {
            check("constraint_cost (constraints)", file.num_constraints, per_agent.len())?;
        }
        let parts = TabularParts {
            num_states: file.num_states,
            actions_per_agent: file.actions_per_agent,
            transition: file.transition.into_iter().flatten().flatten().collect(),
            cost: file.cost.into_iter().flatten().flatten().collect(),
            constraint_cost: file
                .constraint_cost
                .into_iter()
                .flatten()
                .flatten()
                .flatten()
                .collect(),
            bounds: file.bounds,
            cost_noise: file.cost_noise,
        };
        TabularCmg::new(parts)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file_repr())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: TabularCmgFile = serde_json::from_str(text)?;
        Self::from_file_repr(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

impl Environment for TabularCmg {
    fn num_states(&self) -> usize {
        self.num_states
    }

    fn action_space(&self) -> &JointActionSpace {
        &self.space
    }

    fn num_constraints(&self) -> usize {
        self.num_constraints
    }

    fn bounds(&self) -> &[f64] {
        &self.bounds
    }

    fn step(&self, state: usize, action: &JointAction, rng: &mut SimRng) -> Result<StageOutcome> {
        let next_state = self.sample_transition(state, action, rng)?;
        let (costs, constraint_costs) = self.immediate_costs(state, action, rng)?;
        Ok(StageOutcome {
            next_state,
            costs,
            constraint_costs,
        })
    }
}

pub const TABULAR_FORMAT: &str = "tabular-cmg/1";
const JOINT_ORDER: &str = "mixed-radix, agent 0 most significant";

/// On-disk JSON layout of a [`TabularCmg`], nested for readability.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabularCmgFile {
    pub format: String,
    pub num_agents: usize,
    pub num_states: usize,
    pub actions_per_agent: Vec<usize>,
    pub num_constraints: usize,
    #[serde(default)]
    pub joint_action_order: String,
    /// `[state][joint action][next state]`
    pub transition: Vec<Vec<Vec<f64>>>,
    /// `[agent][state][joint action]`
    pub cost: Vec<Vec<Vec<f64>>>,
    /// `[agent][constraint][state][joint action]`
    pub constraint_cost: Vec<Vec<Vec<Vec<f64>>>>,
    pub bounds: Vec<f64>,
    #[serde(default)]
    pub cost_noise: f64,
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    })
}

fn affine_into_unit(values: &mut [f64], lo: f64, hi: f64) {
    let scale = if hi > lo { hi - lo } else { 1.0 };
    for v in values {
        *v = (*v - lo) / scale;
    }
}

/// Random instance generator used by tests, the oracle suite and examples.
/// Costs and constraint costs are uniform on `[0, 1]`; transition rows are
/// normalized uniform draws (all entries positive, so the chain is ergodic
/// under every policy).
pub fn random_tabular(
    num_states: usize,
    actions_per_agent: &[usize],
    bounds: Vec<f64>,
    rng: &mut SimRng,
) -> Result<TabularCmg> {
    let space = JointActionSpace::new(actions_per_agent)?;
    let (ns, na, nn, nk) = (num_states, space.size(), space.num_agents(), bounds.len());
    let mut transition = Vec::with_capacity(ns * na * ns);
    for _ in 0..ns * na {
        let row: Vec<f64> = (0..ns).map(|_| rng.gen_range(0.05..1.0)).collect();
        let total: f64 = row.iter().sum();
        transition.extend(row.iter().map(|p| p / total));
    }
    let cost = (0..nn * ns * na).map(|_| rng.gen::<f64>()).collect();
    let constraint_cost = (0..nn * nk * ns * na).map(|_| rng.gen::<f64>()).collect();
    TabularCmg::new(TabularParts {
        num_states,
        actions_per_agent: actions_per_agent.to_vec(),
        transition,
        cost,
        constraint_cost,
        bounds,
        cost_noise: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state() -> TabularParts {
        // one agent, two actions, two states
        TabularParts {
            num_states: 2,
            actions_per_agent: vec![2],
            transition: vec![0.5, 0.5, 0.9, 0.1, 0.2, 0.8, 1.0, 0.0],
            cost: vec![0.1, 0.2, 0.3, 0.4],
            constraint_cost: vec![1.0, 2.0, 3.0, 4.0],
            bounds: vec![2.5],
            cost_noise: 0.0,
        }
    }

    #[test]
    fn mixed_radix_encoding_round_trips() {
        let space = JointActionSpace::new(&[3, 2, 4]).unwrap();
        assert_eq!(space.size(), 24);
        let a = JointAction(vec![2, 1, 3]);
        assert_eq!(space.encode(&a).unwrap(), (2 * 2 + 1) * 4 + 3);
        for i in 0..24 {
            assert_eq!(space.encode(&space.decode(i).unwrap()).unwrap(), i);
        }
        assert!(matches!(space.decode(24), Err(Error::Index { .. })));
        assert!(space.encode(&JointAction(vec![3, 0, 0])).is_err());
    }

    #[test]
    fn valid_two_state_instance_passes() {
        let cmg = TabularCmg::new(two_state()).unwrap();
        assert!(cmg.validate().is_clean());
    }

    #[test]
    fn short_row_is_reported_with_its_index() {
        let mut parts = two_state();
        parts.transition[2] = 0.8; // row (s=0, a=1) now sums to 0.9
        let cmg = TabularCmg::from_parts_unchecked(parts.clone()).unwrap();
        let report = cmg.validate();
        assert!(!report.passed());
        assert!(matches!(
            report.errors[0],
            ValidationIssue::RowSum { state: 0, joint_action: 1, sum } if (sum - 0.9).abs() < 1e-12
        ));
        assert!(TabularCmg::new(parts).is_err());
    }

    #[test]
    fn negative_entries_and_bad_shapes_are_reported() {
        let mut parts = two_state();
        parts.transition[0] = -0.5;
        parts.transition[1] = 1.5;
        let report = TabularCmg::from_parts_unchecked(parts).unwrap().validate();
        assert!(report
            .errors
            .iter()
            .any(|e| matches!(e, ValidationIssue::NegativeProbability { next_state: 0, .. })));

        let mut parts = two_state();
        parts.cost.pop();
        let report = TabularCmg::from_parts_unchecked(parts).unwrap().validate();
        assert!(matches!(&report.errors[0], ValidationIssue::Shape { what, .. } if what == "cost"));
    }

    #[test]
    fn absorbing_state_triggers_ergodicity_warning() {
        // 3-state chain 0 -> 1 -> 2, state 2 absorbing under all actions
        let transition = vec![
            0.0, 1.0, 0.0, //
            0.0, 0.0, 1.0, //
            0.0, 0.0, 1.0,
        ];
        let cmg = TabularCmg::new(TabularParts {
            num_states: 3,
            actions_per_agent: vec![1],
            transition,
            cost: vec![0.0; 3],
            constraint_cost: vec![],
            bounds: vec![],
            cost_noise: 0.0,
        })
        .unwrap();
        let report = cmg.validate();
        assert!(report.passed());
        assert_eq!(
            report.warnings,
            vec![ValidationIssue::Reducible {
                outside_class: vec![1, 2]
            }]
        );
    }

    #[test]
    fn deterministic_row_always_hits_its_state() {
        let cmg = TabularCmg::new(two_state()).unwrap();
        let mut rng = rng_stream(1, 0);
        for _ in 0..1000 {
            // (s=1, a=1) row is [1, 0]
            assert_eq!(cmg.sample_transition(1, &JointAction(vec![1]), &mut rng).unwrap(), 0);
        }
    }

    #[test]
    fn uniform_row_frequencies_match() {
        let cmg = TabularCmg::new(TabularParts {
            num_states: 4,
            actions_per_agent: vec![1],
            transition: vec![0.25; 16],
            cost: vec![0.0; 4],
            constraint_cost: vec![],
            bounds: vec![],
            cost_noise: 0.0,
        })
        .unwrap();
        let mut rng = rng_stream(11, 0);
        let mut counts = [0usize; 4];
        let draws = 100_000;
        for _ in 0..draws {
            counts[cmg.sample_transition(2, &JointAction(vec![0]), &mut rng).unwrap()] += 1;
        }
        for c in counts {
            assert!((c as f64 / draws as f64 - 0.25).abs() < 0.01, "{counts:?}");
        }
    }

    #[test]
    fn same_seed_same_sequence() {
        let cmg = TabularCmg::new(two_state()).unwrap();
        let run = |seed| {
            let mut rng = rng_stream(seed, 0);
            (0..200)
                .map(|i| cmg.sample_transition(i % 2, &JointAction(vec![0]), &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(5), run(5));
    }

    #[test]
    fn out_of_range_indices_are_errors() {
        let cmg = TabularCmg::new(two_state()).unwrap();
        let mut rng = rng_stream(0, 0);
        assert!(matches!(
            cmg.sample_transition(2, &JointAction(vec![0]), &mut rng),
            Err(Error::Index { what: "state", .. })
        ));
        assert!(cmg.immediate_costs(0, &JointAction(vec![2]), &mut rng).is_err());
    }

    #[test]
    fn zero_noise_costs_are_table_lookups() {
        let cmg = TabularCmg::new(two_state()).unwrap();
        let mut rng = rng_stream(0, 0);
        let (c, g) = cmg.immediate_costs(1, &JointAction(vec![0]), &mut rng).unwrap();
        assert_eq!(c, vec![0.3]);
        assert_eq!(g, vec![vec![3.0]]);
    }

    #[test]
    fn noisy_costs_are_unbiased_and_independent() {
        // two agents, one constraint, single state/action
        let cmg = TabularCmg::new(TabularParts {
            num_states: 1,
            actions_per_agent: vec![1, 1],
            transition: vec![1.0],
            cost: vec![0.4, 0.6],
            constraint_cost: vec![0.2, 0.7],
            bounds: vec![1.0],
            cost_noise: 0.0,
        })
        .unwrap()
        .with_cost_noise(0.1)
        .unwrap();
        let mut rng = rng_stream(3, 0);
        let draws = 100_000;
        let a = JointAction(vec![0, 0]);
        let mut xs = Vec::with_capacity(draws);
        let mut ys = Vec::with_capacity(draws);
        for _ in 0..draws {
            let (c, g) = cmg.immediate_costs(0, &a, &mut rng).unwrap();
            xs.push(c[0]);
            ys.push(g[1][0]);
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (mx, my) = (mean(&xs), mean(&ys));
        assert!((mx - 0.4).abs() < 0.005);
        assert!((my - 0.7).abs() < 0.005);
        let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>();
        let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
        let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum::<f64>();
        assert!((cov / (vx * vy).sqrt()).abs() < 0.02);
    }

    #[test]
    fn json_round_trip_preserves_instance() {
        let mut rng = rng_stream(9, 0);
        let cmg = random_tabular(3, &[2, 3], vec![0.5], &mut rng).unwrap();
        let back = TabularCmg::from_json(&cmg.to_json().unwrap()).unwrap();
        assert_eq!(cmg, back);
    }

    #[test]
    fn json_with_inconsistent_shapes_is_rejected() {
        let mut rng = rng_stream(9, 0);
        let cmg = random_tabular(2, &[2], vec![0.5], &mut rng).unwrap();
        let mut file = cmg.to_file_repr();
        file.bounds.push(1.0);
        assert!(matches!(
            TabularCmg::from_file_repr(file),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn normalization_maps_costs_into_unit_interval() {
        let cmg = TabularCmg::new(two_state()).unwrap();
        let norm = cmg.normalized().unwrap();
        assert_eq!(norm.cost(0, 0, 0), 0.0);
        assert!((norm.cost(0, 1, 1) - 1.0).abs() < 1e-12);
        // g in [1, 4], b = 2.5 maps to 0.5
        assert!((norm.bounds()[0] - 0.5).abs() < 1e-12);
        assert!(norm.validate().passed());
    }
}
