//! The distributed primal-dual training loop.

mod schedule;

pub use schedule::{project_box, schedule_at, StepSchedule, StepSizes};

use std::collections::VecDeque;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{
    actor_update, advantage, average_cost_update, critic_step, dual_critic_update, dual_update,
    local_lagrangian_cost, td_error, AgentState,
};
use crate::cmg::{rng_stream, sample_categorical, Environment, JointAction, JointActionSpace, SimRng};
use crate::error::{Error, Result};
use crate::fa::{probs, score_with_probs, FeatureSpec, FeatureTable};
use crate::network::{
    consensus_stats, max_pairwise_distance, ConsensusStats, MixingSchedule, NetworkConfig, Topology,
};

pub const ENV_STREAM: u64 = 0;
pub const TOPOLOGY_STREAM: u64 = 1;
pub const CHECKPOINT_FORMAT: &str = "cmarl-checkpoint/1";

/// RNG stream of agent `n`.
pub fn agent_stream(n: usize) -> u64 {
    2 + n as u64
}

/// State at which the advantage baseline's policy is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdvantageState {
    #[default]
    Current,
    Next,
}

/// Stop once `||lambda_perp||` and the per-step change of the mean
/// multiplier stay below their thresholds for `window` consecutive steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarlyStop {
    pub window: u64,
    pub lambda_disagreement: f64,
    pub lambda_drift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub horizon: u64,
    pub features: FeatureSpec,
    pub network: NetworkConfig,
    pub schedule: StepSchedule,
    pub lambda_max: Vec<f64>,
    pub theta_max: f64,
    pub metrics_every: u64,
    pub checkpoint_every: Option<u64>,
    pub advantage_state: AdvantageState,
    pub early_stop: Option<EarlyStop>,
    pub parallel: bool,
}

impl TrainConfig {
    pub const DEFAULT_LAMBDA_MAX: f64 = 10.0;
    pub const DEFAULT_THETA_MAX: f64 = 50.0;
    pub const DEFAULT_METRICS_EVERY: u64 = 100;

    pub fn with_defaults(seed: u64, horizon: u64, num_constraints: usize) -> Self {
        Self {
            seed,
            horizon,
            features: FeatureSpec {
                seed,
                ..FeatureSpec::default()
            },
            network: NetworkConfig::default(),
            schedule: StepSchedule::default(),
            lambda_max: vec![Self::DEFAULT_LAMBDA_MAX; num_constraints],
            theta_max: Self::DEFAULT_THETA_MAX,
            metrics_every: Self::DEFAULT_METRICS_EVERY,
            checkpoint_every: None,
            advantage_state: AdvantageState::Current,
            early_stop: None,
            parallel: false,
        }
    }

    pub fn validate(&self, num_constraints: usize) -> Result<()> {
        self.schedule.validate()?;
        self.features.validate()?;
        self.network.validate()?;
        if self.lambda_max.len() != num_constraints {
            return Err(Error::shape("lambda_max", num_constraints, self.lambda_max.len()));
        }
        if let Some(v) = self.lambda_max.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::config(format!("lambda_max entries must be positive, got {v}")));
        }
        if !(self.theta_max > 0.0 && self.theta_max.is_finite()) {
            return Err(Error::config("theta_max must be positive"));
        }
        if self.metrics_every == 0 {
            return Err(Error::config("metrics_every must be at least 1"));
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::config("checkpoint_every must be at least 1"));
        }
        if let Some(es) = &self.early_stop {
            if es.window == 0 || !(es.lambda_disagreement > 0.0) || !(es.lambda_drift > 0.0) {
                return Err(Error::config("early_stop needs a positive window and positive thresholds"));
            }
        }
        Ok(())
    }

    /// Number of iterations averaged by the tail statistics: `ceil(steps / 10)`.
    pub fn tail_len(steps: u64) -> u64 {
        steps.div_ceil(10)
    }
}

/// One row of the metrics series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub j: f64,
    /// `<G_hat> - b` per constraint.
    pub g_gap: Vec<f64>,
    pub lambda_mean: Vec<f64>,
    pub lambda_disagreement: f64,
    pub critic_disagreement: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// `lambda_hat[agent][constraint]`.
    pub lambda_agents: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailStats {
    pub iterations: u64,
    pub g_gap_mean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub steps: u64,
    pub stopped_early: bool,
    pub j: f64,
    pub g_gap: Vec<f64>,
    pub lambda: ConsensusStats,
    pub lambda_max_pairwise: f64,
    pub critic: ConsensusStats,
    pub tail: TailStats,
}

/// Marks in the order they happen within one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Observe,
    LagrangianCost,
    AverageCost,
    SampleAction,
    TdError,
    CriticStep,
    DualCritic,
    ActorStep,
    MixCritic,
    MixMultiplier,
    MultiplierStep,
}

pub trait StepObserver {
    fn on_phase(&mut self, step: u64, phase: Phase);

    fn on_mix(&mut self, _step: u64, _before: &[Vec<f64>], _after: &[Vec<f64>]) {}
}

pub trait TrainSink {
    fn record(&mut self, record: &MetricsRecord) -> Result<()>;

    fn checkpoint(&mut self, _checkpoint: &Checkpoint) -> Result<()> {
        Ok(())
    }
}

impl TrainSink for Vec<MetricsRecord> {
    fn record(&mut self, record: &MetricsRecord) -> Result<()> {
        self.push(record.clone());
        Ok(())
    }
}

/// Everything that changes during training, including RNG streams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub step: u64,
    pub state: usize,
    pub action: Vec<usize>,
    pub agents: Vec<AgentState>,
    pub j: f64,
    pub env_rng: SimRng,
    pub topology_rng: SimRng,
    pub agent_rngs: Vec<SimRng>,
    /// Per-iteration `<G_hat> - b`, most recent last.
    pub tail: VecDeque<Vec<f64>>,
    pub calm_steps: u64,
    pub stopped_early: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config: TrainConfig,
    pub state: TrainerState,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text)?;
        if c.format != CHECKPOINT_FORMAT {
            return Err(Error::config(format!("unsupported checkpoint format '{}'", c.format)));
        }
        Ok(c)
    }
}

pub struct Trainer<'a> {
    env: &'a dyn Environment,
    config: TrainConfig,
    space: JointActionSpace,
    bounds: Vec<f64>,
    critic: Arc<FeatureTable>,
    policies: Vec<Arc<FeatureTable>>,
    topology: Topology,
    mixing: MixingSchedule,
    st: TrainerState,
    observer: Option<Box<dyn StepObserver + 'a>>,
}

impl<'a> Trainer<'a> {
    pub fn new(env: &'a dyn Environment, config: TrainConfig) -> Result<Self> {
        let n = env.num_agents();
        let k = env.num_constraints();
        config.validate(k)?;
        let space = env.action_space().clone();
        let num_states = env.num_states();
        let pairs = num_states
            .checked_mul(space.size())
            .ok_or_else(|| Error::config("state-action space too large"))?;
        let critic = Arc::new(config.features.critic_table(pairs));
        let policies = (0..n)
            .map(|i| Arc::new(config.features.policy_table(i, num_states, space.radices()[i])))
            .collect::<Vec<_>>();

        let mut topology_rng = rng_stream(config.seed, TOPOLOGY_STREAM);
        let topology = config.network.topology.build(n, &mut topology_rng)?;
        let mixing = MixingSchedule::new(&config.network, topology.clone())?;

        let mut env_rng = rng_stream(config.seed, ENV_STREAM);
        let state = env_rng.gen_range(0..num_states);
        let mut agent_rngs: Vec<SimRng> = (0..n).map(|i| rng_stream(config.seed, agent_stream(i))).collect();
        let agents: Vec<AgentState> = (0..n)
            .map(|_| AgentState::zeros(config.features.policy_dim, config.features.critic_dim, k))
            .collect();
        let action = (0..n)
            .map(|i| {
                let p = probs(&policies[i], &agents[i].theta, space.radices()[i], state);
                sample_categorical(&p, &mut agent_rngs[i])
            })
            .collect();

        Ok(Self {
            env,
            bounds: env.bounds().to_vec(),
            space,
            critic,
            policies,
            topology,
            mixing,
            st: TrainerState {
                step: 0,
                state,
                action,
                agents,
                j: 0.0,
                env_rng,
                topology_rng,
                agent_rngs,
                tail: VecDeque::new(),
                calm_steps: 0,
                stopped_early: false,
            },
            observer: None,
            config,
        })
    }

    /// Rebuild from a checkpoint; continues bit-exactly where it stopped.
    pub fn resume(env: &'a dyn Environment, checkpoint: Checkpoint) -> Result<Self> {
        let mut t = Self::new(env, checkpoint.config)?;
        let st = checkpoint.state;
        let n = env.num_agents();
        if st.agents.len() != n || st.agent_rngs.len() != n || st.action.len() != n {
            return Err(Error::shape("checkpoint agents", n, st.agents.len()));
        }
        if st.state >= env.num_states() {
            return Err(Error::Index {
                what: "checkpoint state",
                index: st.state,
                limit: env.num_states(),
            });
        }
        t.space.check(&JointAction(st.action.clone()))?;
        t.st = st;
        Ok(t)
    }

    pub fn set_observer(&mut self, observer: Box<dyn StepObserver + 'a>) {
        self.observer = Some(observer);
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn state(&self) -> &TrainerState {
        &self.st
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn mixing(&self) -> &MixingSchedule {
        &self.mixing
    }

    pub fn critic_features(&self) -> &Arc<FeatureTable> {
        &self.critic
    }

    pub fn policy_features(&self) -> &[Arc<FeatureTable>] {
        &self.policies
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            config: self.config.clone(),
            state: self.st.clone(),
        }
    }

    pub fn metrics(&self) -> MetricsRecord {
        let sizes = self.config.schedule.at(self.st.step);
        let lambdas: Vec<Vec<f64>> = self.st.agents.iter().map(|a| a.lambda_hat.clone()).collect();
        let ws: Vec<Vec<f64>> = self.st.agents.iter().map(|a| a.w.clone()).collect();
        let lam = consensus_stats(&lambdas);
        MetricsRecord {
            step: self.st.step,
            j: self.st.j,
            g_gap: self.g_gap(),
            lambda_mean: lam.mean,
            lambda_disagreement: lam.disagreement,
            critic_disagreement: consensus_stats(&ws).disagreement,
            alpha: sizes.alpha,
            beta: sizes.beta,
            gamma: sizes.gamma,
            lambda_agents: lambdas,
        }
    }

    fn g_gap(&self) -> Vec<f64> {
        let g: Vec<Vec<f64>> = self.st.agents.iter().map(|a| a.g_hat.clone()).collect();
        consensus_stats(&g)
            .mean
            .iter()
            .zip(&self.bounds)
            .map(|(g, b)| g - b)
            .collect()
    }

    pub fn summary(&self) -> TrainingSummary {
        let lambdas: Vec<Vec<f64>> = self.st.agents.iter().map(|a| a.lambda_hat.clone()).collect();
        let ws: Vec<Vec<f64>> = self.st.agents.iter().map(|a| a.w.clone()).collect();
        let k = self.bounds.len();
        let take = (TrainConfig::tail_len(self.st.step) as usize).min(self.st.tail.len());
        let mut tail_mean = vec![0.0; k];
        for gap in self.st.tail.iter().skip(self.st.tail.len() - take) {
            for (m, g) in tail_mean.iter_mut().zip(gap) {
                *m += g;
            }
        }
        if take > 0 {
            for m in &mut tail_mean {
                *m /= take as f64;
            }
        }
        TrainingSummary {
            steps: self.st.step,
            stopped_early: self.st.stopped_early,
            j: self.st.j,
            g_gap: self.g_gap(),
            lambda: consensus_stats(&lambdas),
            lambda_max_pairwise: max_pairwise_distance(&lambdas),
            critic: consensus_stats(&ws),
            tail: TailStats {
                iterations: take as u64,
                g_gap_mean: tail_mean,
            },
        }
    }

    fn phase(&mut self, step: u64, phase: Phase) {
        if let Some(o) = self.observer.as_mut() {
            o.on_phase(step, phase);
        }
    }

    /// Run until the horizon (or the early-stop rule) is reached.
    pub fn run(&mut self, sink: &mut dyn TrainSink) -> Result<TrainingSummary> {
        if self.st.step == 0 {
            sink.record(&self.metrics())?;
        }
        while self.st.step < self.config.horizon && !self.st.stopped_early {
            let rngs = (
                self.st.env_rng.clone(),
                self.st.topology_rng.clone(),
                self.st.agent_rngs.clone(),
            );
            if let Err(e) = self.step() {
                if matches!(e, Error::NonFinite { .. }) {
                    (self.st.env_rng, self.st.topology_rng, self.st.agent_rngs) = rngs;
                    log::error!("{e}; dumping checkpoint at step {}", self.st.step);
                    sink.checkpoint(&self.checkpoint())?;
                }
                return Err(e);
            }
            let t = self.st.step;
            if t % self.config.metrics_every == 0 || t == self.config.horizon || self.st.stopped_early {
                sink.record(&self.metrics())?;
            }
            if self.config.checkpoint_every.is_some_and(|c| t % c == 0) {
                sink.checkpoint(&self.checkpoint())?;
            }
        }
        Ok(self.summary())
    }

    /// One full iteration. Leaves the state untouched (apart from RNG
    /// streams) if a non-finite value appears.
    pub fn step(&mut self) -> Result<()> {
        let t = self.st.step;
        let StepSizes { alpha, beta, gamma } = self.config.schedule.at(t);
        let n = self.st.agents.len();
        let size = self.space.size();
        let radices = self.space.radices().to_vec();

        let mix = self.mixing.draw(&mut self.st.topology_rng)?;
        let s = self.st.state;
        let joint = JointAction(self.st.action.clone());
        let out = self.env.step(s, &joint, &mut self.st.env_rng)?;
        let s_next = out.next_state;
        self.phase(t, Phase::Observe);

        let agents = &self.st.agents;
        let l: Vec<f64> = (0..n)
            .map(|i| local_lagrangian_cost(out.costs[i], &out.constraint_costs[i], &agents[i].lambda_hat, &self.bounds))
            .collect();
        self.phase(t, Phase::LagrangianCost);

        let agents = &self.st.agents;
        let avg: Vec<f64> = (0..n).map(|i| average_cost_update(agents[i].avg_cost, l[i], alpha)).collect();
        self.phase(t, Phase::AverageCost);

        let mut next_action = Vec::with_capacity(n);
        for i in 0..n {
            let p = probs(&self.policies[i], &self.st.agents[i].theta, radices[i], s_next);
            next_action.push(sample_categorical(&p, &mut self.st.agent_rngs[i]));
        }
        let next_joint = JointAction(next_action);
        self.phase(t, Phase::SampleAction);

        let phi_cur = self.critic.row(s * size + self.space.encode(&joint)?).into_owned();
        let phi_next = self.critic.row(s_next * size + self.space.encode(&next_joint)?).into_owned();
        let agents = &self.st.agents;
        let td: Vec<f64> = (0..n)
            .map(|i| td_error(&agents[i].w, agents[i].avg_cost, l[i], &phi_cur, &phi_next))
            .collect();
        self.phase(t, Phase::TdError);

        let agents = &self.st.agents;
        let w_tilde: Vec<Vec<f64>> = (0..n).map(|i| critic_step(&agents[i].w, td[i], &phi_cur, alpha)).collect();
        self.phase(t, Phase::CriticStep);

        let agents = &self.st.agents;
        let g_hat: Vec<Vec<f64>> = (0..n)
            .map(|i| dual_critic_update(&agents[i].g_hat, &out.constraint_costs[i], alpha))
            .collect();
        self.phase(t, Phase::DualCritic);

        let baseline_state = match self.config.advantage_state {
            AdvantageState::Current => s,
            AdvantageState::Next => s_next,
        };
        let actor = |i: usize| -> Result<Vec<f64>> {
            let agent = &self.st.agents[i];
            let pf = &self.policies[i];
            let p_cur = probs(pf, &agent.theta, radices[i], s);
            let p_base = if baseline_state == s {
                p_cur.clone()
            } else {
                probs(pf, &agent.theta, radices[i], baseline_state)
            };
            let adv = advantage(&self.critic, &agent.w, &self.space, s, &joint, i, &p_base)?;
            let psi = score_with_probs(pf, &p_cur, radices[i], s, joint.0[i]);
            Ok(actor_update(&agent.theta, adv, &psi, beta, self.config.theta_max))
        };
        let theta: Vec<Vec<f64>> = if self.config.parallel {
            (0..n).into_par_iter().map(actor).collect::<Result<_>>()?
        } else {
            (0..n).map(actor).collect::<Result<_>>()?
        };
        self.phase(t, Phase::ActorStep);

        let w_new = mix.mix(&w_tilde)?;
        if let Some(o) = self.observer.as_mut() {
            o.on_mix(t, &w_tilde, &w_new);
        }
        self.phase(t, Phase::MixCritic);

        let lambda_prev: Vec<Vec<f64>> = self.st.agents.iter().map(|a| a.lambda_hat.clone()).collect();
        let mixed = mix.mix(&lambda_prev)?;
        self.phase(t, Phase::MixMultiplier);

        let agents = &self.st.agents;
        let lambda_new: Vec<Vec<f64>> = (0..n)
            .map(|i| dual_update(&mixed[i], &agents[i].g_hat, gamma, &self.bounds, &self.config.lambda_max))
            .collect();
        self.phase(t, Phase::MultiplierStep);

        let mean_cost = out.costs.iter().sum::<f64>() / n as f64;
        let j = self.st.j + alpha * (mean_cost - self.st.j);
        let new_agents: Vec<AgentState> = (0..n)
            .map(|i| AgentState {
                theta: theta[i].clone(),
                w: w_new[i].clone(),
                avg_cost: avg[i],
                g_hat: g_hat[i].clone(),
                lambda_hat: lambda_new[i].clone(),
            })
            .collect();
        for (i, a) in new_agents.iter().enumerate() {
            a.check_finite(i, t)?;
        }
        if !j.is_finite() {
            return Err(Error::NonFinite {
                what: "objective estimate".into(),
                step: t,
            });
        }

        let mean_before = consensus_stats(&lambda_prev).mean;
        let lam = consensus_stats(&lambda_new);
        self.st.agents = new_agents;
        self.st.state = s_next;
        self.st.action = next_joint.0;
        self.st.j = j;
        self.st.step = t + 1;

        let cap = TrainConfig::tail_len(self.config.horizon).max(1) as usize;
        let gap = self.g_gap();
        if self.st.tail.len() == cap {
            self.st.tail.pop_front();
        }
        self.st.tail.push_back(gap);

        if let Some(es) = &self.config.early_stop {
            let drift = lam
                .mean
                .iter()
                .zip(&mean_before)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if lam.disagreement < es.lambda_disagreement && drift < es.lambda_drift {
                self.st.calm_steps += 1;
            } else {
                self.st.calm_steps = 0;
            }
            if self.st.calm_steps >= es.window {
                self.st.stopped_early = true;
            }
        }
        Ok(())
    }
}

/// Train from scratch and collect every metrics record in memory.
pub fn run_training(env: &dyn Environment, config: TrainConfig) -> Result<(Vec<MetricsRecord>, TrainingSummary)> {
    let mut trainer = Trainer::new(env, config)?;
    let mut records = Vec::new();
    let summary = trainer.run(&mut records)?;
    Ok((records, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmg::random_tabular;

    fn toy(k: usize) -> crate::cmg::TabularCmg {
        let mut rng = rng_stream(21, 0);
        random_tabular(3, &[2, 2], vec![0.5; k], &mut rng).unwrap()
    }

    fn small_config(horizon: u64, k: usize) -> TrainConfig {
        let mut c = TrainConfig::with_defaults(5, horizon, k);
        c.features.critic_dim = 6;
        c.features.policy_dim = 4;
        c.metrics_every = 10;
        c
    }

    #[test]
    fn horizon_zero_emits_initial_metrics_only() {
        let env = toy(1);
        let (records, summary) = run_training(&env, small_config(0, 1)).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].step, 0);
        assert_eq!(summary.steps, 0);
        assert_eq!(summary.lambda.disagreement, 0.0);
    }

    #[test]
    fn runs_are_deterministic() {
        let env = toy(1);
        let a = run_training(&env, small_config(500, 1)).unwrap();
        let b = run_training(&env, small_config(500, 1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn boxes_hold_at_every_step() {
        let env = toy(2);
        let mut cfg = small_config(300, 2);
        cfg.lambda_max = vec![0.05, 0.2];
        cfg.theta_max = 0.5;
        let mut tr = Trainer::new(&env, cfg).unwrap();
        for _ in 0..300 {
            tr.step().unwrap();
            for a in &tr.state().agents {
                assert!(a.theta.iter().all(|v| v.abs() <= 0.5));
                assert!(a.lambda_hat[0] >= 0.0 && a.lambda_hat[0] <= 0.05);
                assert!(a.lambda_hat[1] >= 0.0 && a.lambda_hat[1] <= 0.2);
            }
        }
    }

    #[test]
    fn metrics_cadence() {
        let env = toy(1);
        let (records, _) = run_training(&env, small_config(35, 1)).unwrap();
        let steps: Vec<u64> = records.iter().map(|r| r.step).collect();
        assert_eq!(steps, vec![0, 10, 20, 30, 35]);
    }

    #[test]
    fn early_stop_triggers_on_loose_thresholds() {
        let env = toy(1);
        let mut cfg = small_config(1000, 1);
        cfg.early_stop = Some(EarlyStop {
            window: 5,
            lambda_disagreement: 1e9,
            lambda_drift: 1e9,
        });
        let (records, summary) = run_training(&env, cfg).unwrap();
        assert!(summary.stopped_early);
        assert_eq!(summary.steps, 5);
        assert_eq!(records.last().unwrap().step, 5);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let env = toy(1);
        let mut cfg = small_config(10, 1);
        cfg.lambda_max = vec![];
        assert!(Trainer::new(&env, cfg).is_err());
        let mut cfg = small_config(10, 1);
        cfg.schedule.alpha_exponent = 0.4;
        assert!(Trainer::new(&env, cfg).is_err());
    }
}
