use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cmg::{Environment, TabularCmg};
use crate::cournot::{build_tabular, CournotConfig, CournotEnv};
use crate::error::{Error, Result};
use crate::fa::FeatureSpec;
use crate::network::{MixingMatrix, MixingSchedule, NetworkConfig, Topology};
use crate::trainer::{AdvantageState, EarlyStop, StepSchedule, TrainConfig, TOPOLOGY_STREAM};

pub const DEFAULT_HORIZON: u64 = 200_000;
const RHO_SAMPLES: usize = 500;

/// Where the game comes from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvironmentSpec {
    #[default]
    CournotDefaults,
    Cournot(CournotConfig),
    Tabular { path: PathBuf },
}

/// Feature block; `seed` falls back to the experiment seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeaturesBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_critic_dim")]
    pub critic_dim: usize,
    #[serde(default = "default_policy_dim")]
    pub policy_dim: usize,
    #[serde(default = "default_range")]
    pub range: [f64; 2],
}

impl Default for FeaturesBlock {
    fn default() -> Self {
        Self {
            seed: None,
            critic_dim: default_critic_dim(),
            policy_dim: default_policy_dim(),
            range: default_range(),
        }
    }
}

fn default_critic_dim() -> usize {
    FeatureSpec::default().critic_dim
}

fn default_policy_dim() -> usize {
    FeatureSpec::default().policy_dim
}

fn default_range() -> [f64; 2] {
    FeatureSpec::default().range
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerBlock {
    pub horizon: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_max: Option<Vec<f64>>,
    pub theta_max: f64,
    pub metrics_every: u64,
    pub checkpoint_every: Option<u64>,
    pub advantage_state: AdvantageState,
    pub early_stop: Option<EarlyStop>,
    pub parallel: bool,
}

impl Default for TrainerBlock {
    fn default() -> Self {
        Self {
            horizon: DEFAULT_HORIZON,
            lambda_max: None,
            theta_max: TrainConfig::DEFAULT_THETA_MAX,
            metrics_every: TrainConfig::DEFAULT_METRICS_EVERY,
            checkpoint_every: None,
            advantage_state: AdvantageState::default(),
            early_stop: None,
            parallel: false,
        }
    }
}

/// One experiment, as read from a JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default)]
    pub environment: EnvironmentSpec,
    #[serde(default)]
    pub features: FeaturesBlock,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub schedule: StepSchedule,
    #[serde(default)]
    pub trainer: TrainerBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

/// A parsed config together with the exact bytes it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub path: PathBuf,
    pub bytes: Vec<u8>,
    pub config: ExperimentConfig,
}

/// Parse JSON strictly; errors name the offending key path.
pub fn parse_config_str(text: &str, origin: &Path) -> Result<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let at = e.path().to_string();
        let inner = e.into_inner();
        let message = if at == "." {
            inner.to_string()
        } else {
            format!("at `{at}`: {inner}")
        };
        Error::Parse {
            path: origin.to_path_buf(),
            message,
        }
    })
}

/// Read, parse and resolve an experiment file. Relative paths inside it
/// are taken relative to the file's directory.
pub fn parse_config(path: &Path) -> Result<LoadedConfig> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = std::str::from_utf8(&bytes).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let raw = parse_config_str(text, path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let config = raw.resolve(base)?;
    Ok(LoadedConfig {
        path: path.to_path_buf(),
        bytes,
        config,
    })
}

/// Built environment, either lazily simulated or tabular.
#[derive(Debug, Clone)]
pub enum BuiltEnvironment {
    Cournot(CournotEnv),
    Tabular(TabularCmg),
}

impl BuiltEnvironment {
    pub fn as_env(&self) -> &dyn Environment {
        match self {
            BuiltEnvironment::Cournot(e) => e,
            BuiltEnvironment::Tabular(t) => t,
        }
    }

    /// The game as a table, if it fits in `cell_budget`.
    pub fn tabular(&self, cell_budget: u128) -> Result<TabularCmg> {
        match self {
            BuiltEnvironment::Cournot(e) => build_tabular(e.config(), cell_budget),
            BuiltEnvironment::Tabular(t) => Ok(t.clone()),
        }
    }
}

impl ExperimentConfig {
    pub fn minimal(seed: u64) -> Self {
        Self {
            seed,
            environment: EnvironmentSpec::CournotDefaults,
            features: FeaturesBlock::default(),
            network: NetworkConfig::default(),
            schedule: StepSchedule::default(),
            trainer: TrainerBlock::default(),
            output_dir: None,
        }
    }

    /// Fill every default explicitly and check referenced files. The result
    /// resolves to itself.
    pub fn resolve(mut self, base: &Path) -> Result<Self> {
        match &mut self.environment {
            EnvironmentSpec::CournotDefaults => {
                self.environment = EnvironmentSpec::Cournot(CournotConfig::default());
            }
            EnvironmentSpec::Cournot(c) => c.validate()?,
            EnvironmentSpec::Tabular { path } => {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
                if !path.is_file() {
                    return Err(Error::config(format!(
                        "environment.tabular.path: file {} does not exist",
                        path.display()
                    )));
                }
            }
        }
        self.features.seed.get_or_insert(self.seed);
        if let Some(dir) = &mut self.output_dir {
            if dir.is_relative() {
                *dir = base.join(&*dir);
            }
        }
        let k = self.num_constraints()?;
        self.trainer
            .lambda_max
            .get_or_insert_with(|| vec![TrainConfig::DEFAULT_LAMBDA_MAX; k]);
        self.train_config(k)?.validate(k)?;
        Ok(self)
    }

    fn num_constraints(&self) -> Result<usize> {
        Ok(match &self.environment {
            EnvironmentSpec::CournotDefaults | EnvironmentSpec::Cournot(_) => 1,
            EnvironmentSpec::Tabular { path } => TabularCmg::load(path)?.num_constraints(),
        })
    }

    pub fn build_environment(&self) -> Result<BuiltEnvironment> {
        Ok(match &self.environment {
            EnvironmentSpec::CournotDefaults => {
                BuiltEnvironment::Cournot(CournotEnv::new(CournotConfig::default())?)
            }
            EnvironmentSpec::Cournot(c) => BuiltEnvironment::Cournot(CournotEnv::new(c.clone())?),
            EnvironmentSpec::Tabular { path } => BuiltEnvironment::Tabular(TabularCmg::load(path)?),
        })
    }

    pub fn feature_spec(&self) -> FeatureSpec {
        FeatureSpec {
            seed: self.features.seed.unwrap_or(self.seed),
            critic_dim: self.features.critic_dim,
            policy_dim: self.features.policy_dim,
            range: self.features.range,
        }
    }

    pub fn train_config(&self, num_constraints: usize) -> Result<TrainConfig> {
        let t = &self.trainer;
        Ok(TrainConfig {
            seed: self.seed,
            horizon: t.horizon,
            features: self.feature_spec(),
            network: self.network.clone(),
            schedule: self.schedule.clone(),
            lambda_max: t
                .lambda_max
                .clone()
                .unwrap_or_else(|| vec![TrainConfig::DEFAULT_LAMBDA_MAX; num_constraints]),
            theta_max: t.theta_max,
            metrics_every: t.metrics_every,
            checkpoint_every: t.checkpoint_every,
            advantage_state: t.advantage_state,
            early_stop: t.early_stop.clone(),
            parallel: t.parallel,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// What `validate` checks beyond parsing.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationSummary {
    pub num_agents: usize,
    pub num_states: usize,
    pub num_joint_actions: usize,
    pub num_constraints: usize,
    pub cmg: Option<crate::cmg::ValidationReport>,
    pub cmg_skipped: Option<String>,
    pub topology: String,
    pub eta: f64,
    pub rho: f64,
    pub time_varying: bool,
    pub schedule_ok: bool,
}

impl ValidationSummary {
    pub fn passed(&self) -> bool {
        self.cmg.as_ref().is_none_or(|r| r.passed()) && self.rho < 1.0 && self.schedule_ok
    }
}

/// Check the game, the mixing matrix and the step-size schedule.
pub fn validate_experiment(config: &ExperimentConfig, cell_budget: u128) -> Result<ValidationSummary> {
    let built = config.build_environment()?;
    let env = built.as_env();
    let (cmg, cmg_skipped) = match built.tabular(cell_budget) {
        Ok(t) => (Some(t.validate()), None),
        Err(e @ Error::Budget { .. }) => (None, Some(e.to_string())),
        Err(e) => return Err(e),
    };
    let mut rng = crate::cmg::rng_stream(config.seed, TOPOLOGY_STREAM);
    let topology: Topology = config.network.topology.build(env.num_agents(), &mut rng)?;
    let eta = MixingMatrix::metropolis(&topology)?.eta();
    let kind = topology.kind().to_string();
    let schedule = MixingSchedule::new(&config.network, topology)?;
    let rho = schedule.expected_rho(RHO_SAMPLES, &mut rng)?;
    let schedule_ok = config.schedule.validate().is_ok();
    Ok(ValidationSummary {
        num_agents: env.num_agents(),
        num_states: env.num_states(),
        num_joint_actions: env.action_space().size(),
        num_constraints: env.num_constraints(),
        cmg,
        cmg_skipped,
        topology: kind,
        eta,
        rho,
        time_varying: matches!(schedule, MixingSchedule::TimeVarying { .. }),
        schedule_ok,
    })
}
