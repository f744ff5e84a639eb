use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::{GammaSchedule, DEFAULT_PLANNER_TOL};
use crate::envs::EnvSpec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    #[default]
    Cpsrl,
    Tsde,
    Doubling,
    Random,
}

impl AgentKind {
    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Cpsrl => "cpsrl",
            AgentKind::Tsde => "tsde",
            AgentKind::Doubling => "doubling",
            AgentKind::Random => "random",
        }
    }
}

impl std::str::FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cpsrl" => Ok(AgentKind::Cpsrl),
            "tsde" => Ok(AgentKind::Tsde),
            "doubling" => Ok(AgentKind::Doubling),
            "random" => Ok(AgentKind::Random),
            other => Err(Error::Config(format!(
                "unknown agent '{other}' (expected cpsrl, tsde, doubling or random)"
            ))),
        }
    }
}

/// Discount schedule as written in a config file. `S`, `A` and `T` are
/// filled in from the environment and horizon.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleConfig {
    Fixed {
        gamma: f64,
    },
    #[default]
    HorizonTuned,
    DoublingTrick,
}

impl ScheduleConfig {
    pub fn resolve(&self, horizon: u64, n_states: usize, n_actions: usize) -> GammaSchedule {
        match *self {
            ScheduleConfig::Fixed { gamma } => GammaSchedule::Fixed(gamma),
            ScheduleConfig::HorizonTuned => GammaSchedule::HorizonTuned {
                horizon,
                n_states,
                n_actions,
            },
            ScheduleConfig::DoublingTrick => GammaSchedule::DoublingTrick {
                n_states,
                n_actions,
            },
        }
    }

    /// Parses the `--schedule` flag: `fixed`, `horizon_tuned` or `doubling_trick`.
    pub fn from_flag(name: &str, gamma: Option<f64>) -> Result<Self> {
        match name {
            "fixed" => gamma
                .map(|gamma| ScheduleConfig::Fixed { gamma })
                .ok_or_else(|| Error::Config("--schedule fixed needs --gamma".into())),
            "horizon_tuned" | "horizon" => Ok(ScheduleConfig::HorizonTuned),
            "doubling_trick" | "doubling" => Ok(ScheduleConfig::DoublingTrick),
            other => Err(Error::Config(format!(
                "unknown schedule '{other}' (expected fixed, horizon_tuned or doubling_trick)"
            ))),
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_alpha() -> f64 {
    1.0
}

fn default_planner_tol() -> f64 {
    DEFAULT_PLANNER_TOL
}

fn default_base_len() -> u64 {
    1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// One experiment: an environment, an agent, and the seeds to run it under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvSpec,
    #[serde(default)]
    pub agent: AgentKind,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    pub horizon: u64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Curve sampling cadence; `max(1, T / 1000)` when absent.
    #[serde(default)]
    pub log_every: Option<u64>,
    #[serde(default = "default_alpha")]
    pub prior_alpha: f64,
    #[serde(default = "default_planner_tol")]
    pub planner_tol: f64,
    /// `L0` for the duration-doubling agent.
    #[serde(default = "default_base_len")]
    pub doubling_base_len: u64,
    /// CPSRL with the doubling-trick schedule: also resample at `t = 2^k`.
    #[serde(default)]
    pub force_boundary_resample: bool,
    /// Record whether the true model lies in the confidence set at every
    /// pseudo-episode start.
    #[serde(default)]
    pub track_confidence: bool,
}

impl RunConfig {
    pub fn new(env: EnvSpec, agent: AgentKind, schedule: ScheduleConfig, horizon: u64) -> Self {
        Self {
            env,
            agent,
            schedule,
            horizon,
            seeds: default_seeds(),
            output_dir: default_output_dir(),
            log_every: None,
            prior_alpha: default_alpha(),
            planner_tol: default_planner_tol(),
            doubling_base_len: default_base_len(),
            force_boundary_resample: false,
            track_confidence: false,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn log_cadence(&self) -> u64 {
        self.log_every
            .unwrap_or((self.horizon / 1000).max(1))
            .max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if !(self.prior_alpha > 0.0 && self.prior_alpha.is_finite()) {
            return Err(Error::Config("prior_alpha must be positive".into()));
        }
        if self.planner_tol.is_nan() || self.planner_tol <= 0.0 {
            return Err(Error::Config("planner_tol must be positive".into()));
        }
        if self.doubling_base_len == 0 {
            return Err(Error::Config("doubling_base_len must be positive".into()));
        }
        if let ScheduleConfig::Fixed { gamma } = self.schedule {
            if !(0.0..1.0).contains(&gamma) {
                return Err(Error::Config(format!("fixed gamma {gamma} outside [0, 1)")));
            }
        }
        Ok(())
    }
}

/// Parses `--seeds`: a comma-separated list (`1,2,5`) or a half-open range
/// (`0..20`).
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("cannot parse seeds '{text}'"));
    if let Some((lo, hi)) = text.split_once("..") {
        let lo: u64 = lo.trim().parse().map_err(|_| bad())?;
        let hi: u64 = hi.trim().parse().map_err(|_| bad())?;
        let seeds: Vec<u64> = (lo..hi).collect();
        if seeds.is_empty() {
            return Err(bad());
        }
        return Ok(seeds);
    }
    text.split(',')
        .map(|s| s.trim().parse().map_err(|_| bad()))
        .collect()
}
