//! Cooperative Cournot game with stochastic market states.
//!
//! Agents choose production levels on a grid over `[0, 1]`. The market price
//! is `x(s, a) = N - s * sum(a)`, agent `n` pays `c_n = -(x - h) a_n` and
//! incurs the constraint cost `g_n = m_n x` against a single bound `b`.
//! The next state index is `Binomial(|S| - 1, p)` with
//! `p = clip(1 - sharpness * sum(a) / N, 0.05, 0.95)`, so larger total
//! production moves mass toward low-valued states.

use serde::{Deserialize, Serialize};

use crate::cmg::{
    add_cost_noise, sample_categorical, Environment, JointAction, JointActionSpace, SimRng,
    StageOutcome, TabularCmg, TabularParts,
};
use crate::error::{Error, Result};

/// Lower and upper clip on the binomial success probability. Keeps every
/// state reachable from every state under every joint action.
pub const P_MIN: f64 = 0.05;
pub const P_MAX: f64 = 0.95;

/// Default budget, in transition-table cells, for [`build_tabular`].
pub const DEFAULT_CELL_BUDGET: u128 = 20_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CournotConfig {
    pub num_agents: usize,
    pub unit_price: f64,
    pub constraint_weights: Vec<f64>,
    pub bound: f64,
    pub num_states: usize,
    pub num_actions: usize,
    pub state_range: [f64; 2],
    pub action_range: [f64; 2],
    pub transition_sharpness: f64,
    /// Optional dependence of the next-state distribution on the current
    /// state value: adds `state_modulation * (s - 0.5)` to `p` before
    /// clipping. Zero disables it.
    pub state_modulation: f64,
    pub cost_noise: f64,
    /// Affinely rescale objective and constraint costs into `[0, 1]`.
    pub normalize_costs: bool,
}

impl Default for CournotConfig {
    fn default() -> Self {
        Self {
            num_agents: 5,
            unit_price: 1.0,
            constraint_weights: vec![0.1, 0.3, 0.5, 0.1, 0.0],
            bound: 0.75,
            num_states: 10,
            num_actions: 10,
            state_range: [0.1, 0.9],
            action_range: [0.0, 1.0],
            transition_sharpness: 1.0,
            state_modulation: 0.0,
            cost_noise: 0.0,
            normalize_costs: false,
        }
    }
}

fn grid(range: [f64; 2], points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![0.5 * (range[0] + range[1])];
    }
    let step = (range[1] - range[0]) / (points - 1) as f64;
    (0..points).map(|i| range[0] + step * i as f64).collect()
}

impl CournotConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::config(m));
        if self.num_agents == 0 {
            return fail("num_agents must be positive".into());
        }
        if self.constraint_weights.len() != self.num_agents {
            return fail(format!(
                "constraint_weights has {} entries for {} agents",
                self.constraint_weights.len(),
                self.num_agents
            ));
        }
        if let Some(m) = self.constraint_weights.iter().find(|m| !(**m >= 0.0 && m.is_finite())) {
            return fail(format!("constraint weights must be finite and >= 0, got {m}"));
        }
        if self.num_states == 0 || self.num_actions == 0 {
            return fail("grid sizes must be positive".into());
        }
        let [slo, shi] = self.state_range;
        if !(slo > 0.0 && shi < 1.0 && slo <= shi) || (self.num_states > 1 && slo >= shi) {
            return fail(format!(
                "state_range must be strictly increasing inside (0, 1), got [{slo}, {shi}]"
            ));
        }
        let [alo, ahi] = self.action_range;
        if !(alo >= 0.0 && ahi <= 1.0 && alo <= ahi) || (self.num_actions > 1 && alo >= ahi) {
            return fail(format!(
                "action_range must be strictly increasing inside [0, 1], got [{alo}, {ahi}]"
            ));
        }
        for (name, v) in [
            ("unit_price", self.unit_price),
            ("bound", self.bound),
            ("transition_sharpness", self.transition_sharpness),
            ("state_modulation", self.state_modulation),
        ] {
            if !v.is_finite() {
                return fail(format!("{name} must be finite"));
            }
        }
        if !(self.cost_noise >= 0.0 && self.cost_noise.is_finite()) {
            return fail(format!("cost_noise must be finite and >= 0, got {}", self.cost_noise));
        }
        Ok(())
    }

    pub fn state_values(&self) -> Vec<f64> {
        grid(self.state_range, self.num_states)
    }

    pub fn action_values(&self) -> Vec<f64> {
        grid(self.action_range, self.num_actions)
    }

    fn action_step(&self) -> f64 {
        if self.num_actions == 1 {
            0.0
        } else {
            (self.action_range[1] - self.action_range[0]) / (self.num_actions - 1) as f64
        }
    }

    /// Total production for a joint action whose indices sum to `index_sum`.
    /// Computed from the index sum so that equal sums give bit-equal totals.
    fn total_from_index_sum(&self, index_sum: usize) -> f64 {
        let base = if self.num_actions == 1 {
            0.5 * (self.action_range[0] + self.action_range[1])
        } else {
            self.action_range[0]
        };
        self.num_agents as f64 * base + self.action_step() * index_sum as f64
    }
}

/// `x(s, a) = N - s * sum_n a_n`.
pub fn market_price(config: &CournotConfig, state_value: f64, production: &[f64]) -> f64 {
    price_from_total(config, state_value, production.iter().sum())
}

fn price_from_total(config: &CournotConfig, state_value: f64, total: f64) -> f64 {
    config.num_agents as f64 - state_value * total
}

/// Per-agent `(c_n, g_n)` with `c_n = -(x - h) a_n` and `g_n = m_n x`.
pub fn stage_costs(config: &CournotConfig, state_value: f64, production: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let x = market_price(config, state_value, production);
    costs_at_price(config, x, production)
}

fn costs_at_price(config: &CournotConfig, x: f64, production: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let c = production
        .iter()
        .map(|a| -(x - config.unit_price) * a)
        .collect();
    let g = config.constraint_weights.iter().map(|m| m * x).collect();
    (c, g)
}

/// Binomial success probability for the next-state draw.
pub fn success_probability(config: &CournotConfig, state_value: f64, total: f64) -> f64 {
    let p = 1.0 - config.transition_sharpness * total / config.num_agents as f64
        + config.state_modulation * (state_value - 0.5);
    p.clamp(P_MIN, P_MAX)
}

/// `Binomial(trials, p)` probability mass function.
pub fn binomial_pmf(trials: usize, p: f64) -> Vec<f64> {
    let q = 1.0 - p;
    let mut coef = 1.0f64;
    (0..=trials)
        .map(|k| {
            if k > 0 {
                coef = coef * (trials - k + 1) as f64 / k as f64;
            }
            coef * p.powi(k as i32) * q.powi((trials - k) as i32)
        })
        .collect()
}

/// Next-state index distribution at state `s_index` under production
/// levels `production` (real values, one per agent).
pub fn transition_distribution(config: &CournotConfig, s_index: usize, production: &[f64]) -> Vec<f64> {
    let s = config.state_values()[s_index];
    binomial_pmf(config.num_states - 1, success_probability(config, s, production.iter().sum()))
}

/// Affine maps applied when `normalize_costs` is set.
#[derive(Debug, Clone, Copy, PartialEq)]
struct CostScaling {
    cost_lo: f64,
    cost_scale: f64,
    cons_lo: f64,
    cons_scale: f64,
}

impl CostScaling {
    fn identity() -> Self {
        Self {
            cost_lo: 0.0,
            cost_scale: 1.0,
            cons_lo: 0.0,
            cons_scale: 1.0,
        }
    }

    fn scan(config: &CournotConfig) -> Self {
        let n = config.num_agents;
        let m = config.num_actions;
        let actions = config.action_values();
        let (mut clo, mut chi, mut glo, mut ghi) =
            (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for s in config.state_values() {
            for own in 0..m {
                for others in 0..=(n - 1) * (m - 1) {
                    let x = price_from_total(config, s, config.total_from_index_sum(own + others));
                    let c = -(x - config.unit_price) * actions[own];
                    clo = clo.min(c);
                    chi = chi.max(c);
                    for w in &config.constraint_weights {
                        glo = glo.min(w * x);
                        ghi = ghi.max(w * x);
                    }
                }
            }
        }
        let scale = |lo: f64, hi: f64| if hi > lo { hi - lo } else { 1.0 };
        Self {
            cost_lo: clo,
            cost_scale: scale(clo, chi),
            cons_lo: glo,
            cons_scale: scale(glo, ghi),
        }
    }
}

/// Lazily sampled Cournot environment. Transition rows are computed from the
/// state and the total production, never stored per joint action.
#[derive(Debug, Clone)]
pub struct CournotEnv {
    config: CournotConfig,
    space: JointActionSpace,
    state_values: Vec<f64>,
    action_values: Vec<f64>,
    /// `pmf[s * (max_index_sum + 1) + index_sum]`
    pmf: Vec<Vec<f64>>,
    max_index_sum: usize,
    scaling: CostScaling,
    bounds: Vec<f64>,
}

impl CournotEnv {
    pub fn new(config: CournotConfig) -> Result<Self> {
        config.validate()?;
        let space = JointActionSpace::new(&vec![config.num_actions; config.num_agents])?;
        let state_values = config.state_values();
        let action_values = config.action_values();
        let max_index_sum = config.num_agents * (config.num_actions - 1);
        let mut pmf = Vec::with_capacity(state_values.len() * (max_index_sum + 1));
        for &s in &state_values {
            for sum in 0..=max_index_sum {
                let p = success_probability(&config, s, config.total_from_index_sum(sum));
                pmf.push(binomial_pmf(config.num_states - 1, p));
            }
        }
        let scaling = if config.normalize_costs {
            CostScaling::scan(&config)
        } else {
            CostScaling::identity()
        };
        let bounds = vec![(config.bound - scaling.cons_lo) / scaling.cons_scale];
        Ok(Self {
            config,
            space,
            state_values,
            action_values,
            pmf,
            max_index_sum,
            scaling,
            bounds,
        })
    }

    pub fn config(&self) -> &CournotConfig {
        &self.config
    }

    pub fn state_values(&self) -> &[f64] {
        &self.state_values
    }

    pub fn action_values(&self) -> &[f64] {
        &self.action_values
    }

    fn row(&self, s: usize, index_sum: usize) -> &[f64] {
        &self.pmf[s * (self.max_index_sum + 1) + index_sum]
    }

    /// Expected costs at `(s, a)` after the optional normalization.
    fn mean_costs(&self, s: usize, action: &JointAction) -> (Vec<f64>, Vec<Vec<f64>>) {
        let index_sum: usize = action.0.iter().sum();
        let x = price_from_total(
            &self.config,
            self.state_values[s],
            self.config.total_from_index_sum(index_sum),
        );
        let production: Vec<f64> = action.0.iter().map(|&i| self.action_values[i]).collect();
        let (c, g) = costs_at_price(&self.config, x, &production);
        let sc = &self.scaling;
        let c = c.into_iter().map(|v| (v - sc.cost_lo) / sc.cost_scale).collect();
        let g = g
            .into_iter()
            .map(|v| vec![(v - sc.cons_lo) / sc.cons_scale])
            .collect();
        (c, g)
    }

    fn check(&self, s: usize, action: &JointAction) -> Result<()> {
        if s >= self.state_values.len() {
            return Err(Error::Index {
                what: "state",
                index: s,
                limit: self.state_values.len(),
            });
        }
        self.space.check(action)
    }
}

impl Environment for CournotEnv {
    fn num_states(&self) -> usize {
        self.state_values.len()
    }

    fn action_space(&self) -> &JointActionSpace {
        &self.space
    }

    fn num_constraints(&self) -> usize {
        1
    }

    fn bounds(&self) -> &[f64] {
        &self.bounds
    }

    fn step(&self, state: usize, action: &JointAction, rng: &mut SimRng) -> Result<StageOutcome> {
        self.check(state, action)?;
        let index_sum: usize = action.0.iter().sum();
        let next_state = sample_categorical(self.row(state, index_sum), rng);
        let (mut costs, mut constraint_costs) = self.mean_costs(state, action);
        add_cost_noise(self.config.cost_noise, &mut costs, &mut constraint_costs, rng);
        Ok(StageOutcome {
            next_state,
            costs,
            constraint_costs,
        })
    }
}

/// Materialize the game as a [`TabularCmg`] with `K = 1`. Refuses instances
/// whose transition table exceeds `cell_budget` cells.
pub fn build_tabular(config: &CournotConfig, cell_budget: u128) -> Result<TabularCmg> {
    config.validate()?;
    let ns = config.num_states as u128;
    let joint = (config.num_actions as u128)
        .checked_pow(config.num_agents as u32)
        .unwrap_or(u128::MAX);
    let cells = ns.saturating_mul(joint).saturating_mul(ns);
    if cells > cell_budget {
        return Err(Error::Budget {
            what: format!(
                "Cournot transition table ({} states x {} joint actions x {} states)",
                ns, joint, ns
            ),
            needed: cells,
            budget: cell_budget,
        });
    }
    let env = CournotEnv::new(config.clone())?;
    let (ns, na, nn) = (env.num_states(), env.space.size(), env.num_agents());
    let mut transition = Vec::with_capacity(ns * na * ns);
    let mut cost = vec![0.0; nn * ns * na];
    let mut constraint_cost = vec![0.0; nn * ns * na];
    for s in 0..ns {
        for ja in 0..na {
            let action = env.space.decode(ja)?;
            let index_sum: usize = action.0.iter().sum();
            transition.extend_from_slice(env.row(s, index_sum));
            let (c, g) = env.mean_costs(s, &action);
            for n in 0..nn {
                cost[(n * ns + s) * na + ja] = c[n];
                constraint_cost[(n * ns + s) * na + ja] = g[n][0];
            }
        }
    }
    TabularCmg::new(TabularParts {
        num_states: ns,
        actions_per_agent: vec![config.num_actions; nn],
        transition,
        cost,
        constraint_cost,
        bounds: env.bounds.clone(),
        cost_noise: config.cost_noise,
    })
}
