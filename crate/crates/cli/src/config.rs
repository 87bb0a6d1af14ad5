//! Run configuration files.
//!
//! ```toml
//! seeds = [0, 1, 2]
//!
//! [environment]
//! kind = "gridworld"      # one_state | random | gridworld | file
//! size = 4
//! slip = 0.1
//! gamma = 0.9
//! tau = 1.0
//!
//! [features]              # optional, defaults to the environment's own map
//! map = "one_hot_state"   # one_hot_state_action | one_hot_state | constant
//!
//! [expert]
//! source = "dataset"      # dataset | exact
//! trajectories = 200
//! horizon = 100
//! misspecification = 0.0
//!
//! [irl]
//! iterations = 400
//! batch_size = 8
//! stepsize = "auto"       # or a number
//!
//! [evaluation]
//! final_metrics = true
//! exact_diagnostics = false
//!
//! [reward]                # used by `solve`
//! source = "true"         # true | weights | constant
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;

use softirl::env::{gridworld, one_state_mdp, random_mdp, EnvironmentBundle, GridworldSpec, RandomMdpSpec};
use softirl::io::load_mdp_file;
use softirl::irl::{IrlConfig, Stepsize, StepsizeRule};
use softirl::{reward_of, FeatureMap, Policy, RewardTable, RewardWeights};

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub environment: EnvironmentConfig,
    #[serde(default)]
    pub features: Option<FeatureConfig>,
    #[serde(default)]
    pub expert: ExpertConfig,
    #[serde(default)]
    pub irl: Option<IrlSection>,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub reward: Option<RewardConfig>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_gamma() -> f64 {
    0.9
}

fn default_tau() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvironmentConfig {
    OneState {
        #[serde(default = "default_gamma")]
        gamma: f64,
        #[serde(default = "default_tau")]
        tau: f64,
    },
    Random {
        n_states: usize,
        n_actions: usize,
        seed: u64,
        #[serde(default = "default_gamma")]
        gamma: f64,
        #[serde(default = "default_tau")]
        tau: f64,
        #[serde(default)]
        nu0_floor: f64,
    },
    Gridworld {
        size: usize,
        #[serde(default)]
        slip: f64,
        #[serde(default = "default_gamma")]
        gamma: f64,
        #[serde(default = "default_tau")]
        tau: f64,
    },
    File {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    OneHotStateAction,
    OneHotState,
    Constant,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureConfig {
    pub map: FeatureKind,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExpertSource {
    /// Sample `trajectories` expert rollouts of length `horizon` (or load `path`).
    #[default]
    Dataset,
    /// Exact feature expectation of the expert truncated at `horizon`.
    Exact,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpertConfig {
    #[serde(default)]
    pub source: ExpertSource,
    #[serde(default = "default_trajectories")]
    pub trajectories: usize,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub misspecification: f64,
    #[serde(default = "default_true")]
    pub save_dataset: bool,
}

fn default_trajectories() -> usize {
    100
}

fn default_horizon() -> usize {
    100
}

fn default_true() -> bool {
    true
}

impl Default for ExpertConfig {
    fn default() -> Self {
        ExpertConfig {
            source: ExpertSource::Dataset,
            trajectories: default_trajectories(),
            horizon: default_horizon(),
            path: None,
            misspecification: 0.0,
            save_dataset: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum StepsizeSetting {
    Fixed(f64),
    Named(StepsizeName),
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum StepsizeName {
    Auto,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum RuleName {
    #[default]
    Theorem,
    Regret,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IrlSection {
    pub iterations: usize,
    pub batch_size: usize,
    #[serde(default = "default_stepsize")]
    pub stepsize: StepsizeSetting,
    #[serde(default)]
    pub stepsize_rule: RuleName,
    #[serde(default)]
    pub horizon_cap: Option<u64>,
    #[serde(default)]
    pub snapshot_every: Option<usize>,
}

fn default_stepsize() -> StepsizeSetting {
    StepsizeSetting::Named(StepsizeName::Auto)
}

impl IrlSection {
    pub fn to_config(&self, seed: u64) -> IrlConfig {
        let rule = match self.stepsize_rule {
            RuleName::Theorem => StepsizeRule::Theorem,
            RuleName::Regret => StepsizeRule::Regret,
        };
        IrlConfig {
            iterations: self.iterations,
            batch_size: self.batch_size,
            stepsize: match self.stepsize {
                StepsizeSetting::Fixed(eta) => Stepsize::Fixed(eta),
                StepsizeSetting::Named(StepsizeName::Auto) => Stepsize::Auto(rule),
            },
            seed,
            horizon_cap: self.horizon_cap,
            snapshot_every: self.snapshot_every,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Score `w̄` against the expert with the exact solver.
    #[serde(default = "default_true")]
    pub final_metrics: bool,
    /// Per-snapshot expert suboptimality and Pinsker sides, plus regret.
    #[serde(default)]
    pub exact_diagnostics: bool,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            final_metrics: true,
            exact_diagnostics: false,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum RewardConfig {
    True,
    Weights { weights: Vec<f64> },
    Constant { value: f64 },
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))?;
        if let EnvironmentConfig::File { path: p } = &mut cfg.environment {
            if p.is_relative() {
                *p = path.parent().unwrap_or(Path::new(".")).join(&*p);
            }
        }
        if let Some(p) = &mut cfg.expert.path {
            if p.is_relative() {
                *p = path.parent().unwrap_or(Path::new(".")).join(&*p);
            }
        }
        if cfg.seeds.is_empty() {
            return Err(CliError::Config("seed list must not be empty".into()));
        }
        Ok(cfg)
    }

    pub fn irl(&self) -> Result<&IrlSection, CliError> {
        self.irl
            .as_ref()
            .ok_or_else(|| CliError::Config("config has no [irl] section".into()))
    }

    pub fn build_environment(&self) -> Result<EnvironmentBundle, CliError> {
        let mut bundle = match &self.environment {
            EnvironmentConfig::OneState { gamma, tau } => one_state_mdp(*gamma, *tau)?,
            EnvironmentConfig::Random {
                n_states,
                n_actions,
                seed,
                gamma,
                tau,
                nu0_floor,
            } => random_mdp(RandomMdpSpec {
                n_states: *n_states,
                n_actions: *n_actions,
                seed: *seed,
                gamma: *gamma,
                tau: *tau,
                nu0_floor: *nu0_floor,
            })?,
            EnvironmentConfig::Gridworld { size, slip, gamma, tau } => gridworld(GridworldSpec {
                size: *size,
                slip_prob: *slip,
                gamma: *gamma,
                tau: *tau,
            })?,
            EnvironmentConfig::File { path } => {
                let loaded = load_mdp_file(path)?;
                let (ns, na) = (loaded.mdp.n_states(), loaded.mdp.n_actions());
                let phi = loaded.phi.unwrap_or_else(|| FeatureMap::one_hot_state_action(ns, na));
                let pi_expert = match (loaded.expert, &loaded.w_true) {
                    (Some(pi), _) => pi,
                    (None, Some(w)) => softirl::env::realizable_expert(&loaded.mdp, &phi, w)?,
                    (None, None) => Policy::uniform(ns, na),
                };
                EnvironmentBundle {
                    mdp: loaded.mdp,
                    phi,
                    w_true: loaded.w_true,
                    pi_expert,
                    provenance: format!("file({})", path.display()),
                }
            }
        };
        if let Some(f) = &self.features {
            let (ns, na) = (bundle.mdp.n_states(), bundle.mdp.n_actions());
            let phi = match f.map {
                FeatureKind::OneHotStateAction => FeatureMap::one_hot_state_action(ns, na),
                FeatureKind::OneHotState => FeatureMap::one_hot_state(ns, na),
                FeatureKind::Constant => FeatureMap::constant(ns, na),
            };
            if bundle.w_true.as_ref().is_some_and(|w| w.dim() != phi.k()) {
                bundle.w_true = None;
            }
            bundle.phi = phi;
        }
        if self.expert.misspecification != 0.0 {
            bundle = bundle.misspecified(self.expert.misspecification)?;
        }
        Ok(bundle)
    }

    pub fn reward_table(&self, bundle: &EnvironmentBundle) -> Result<RewardTable, CliError> {
        let (ns, na) = (bundle.mdp.n_states(), bundle.mdp.n_actions());
        match self.reward.as_ref().unwrap_or(&RewardConfig::True) {
            RewardConfig::True => {
                let w = bundle
                    .w_true
                    .as_ref()
                    .ok_or_else(|| CliError::Config("environment has no true reward; set [reward]".into()))?;
                Ok(reward_of(w, &bundle.phi)?)
            }
            RewardConfig::Weights { weights } => Ok(reward_of(&RewardWeights::new(weights.clone())?, &bundle.phi)?),
            RewardConfig::Constant { value } => Ok(RewardTable::constant(ns, na, *value)),
        }
    }
}
