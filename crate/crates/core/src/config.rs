//! Flat `key=value` run configuration with namespaced keys (`env.*`, `naf.*`,
//! `explore.*`, `ilqg.*`, `train.*`). Every key has a typed default, unknown keys are
//! rejected and the rendered form parses back to an identical configuration.

use crate::envs::{EnvOverrides, ENV_NAMES};
use crate::exploration::{NoiseConfig, NoiseMode};
use crate::ilqg::BackwardOptions;
use crate::naf::HyperParams;
use std::fmt::{self, Display};
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("unknown config key '{0}'")]
    UnknownKey(String),
    #[error("invalid value '{value}' for {key}: {msg}")]
    BadValue { key: String, value: String, msg: String },
    #[error("{key}: {msg}")]
    Invalid { key: String, msg: String },
    #[error("line {line}: expected key=value, got '{text}'")]
    Syntax { line: usize, text: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Naf,
    NafIlqg,
    NafImr,
    NafIlqgImr,
}

impl Mode {
    pub fn uses_ilqg(self) -> bool {
        matches!(self, Self::NafIlqg | Self::NafIlqgImr)
    }

    pub fn uses_imagination(self) -> bool {
        matches!(self, Self::NafImr | Self::NafIlqgImr)
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "naf" => Ok(Self::Naf),
            "naf-ilqg" => Ok(Self::NafIlqg),
            "naf-imr" => Ok(Self::NafImr),
            "naf-ilqg-imr" => Ok(Self::NafIlqgImr),
            other => Err(format!("unknown mode '{other}' (naf, naf-ilqg, naf-imr, naf-ilqg-imr)")),
        }
    }
}

impl Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Naf => "naf",
            Self::NafIlqg => "naf-ilqg",
            Self::NafImr => "naf-imr",
            Self::NafIlqgImr => "naf-ilqg-imr",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub env: Option<String>,
    pub env_overrides: EnvOverrides,
    pub hp: HyperParams,
    pub noise: NoiseConfig,
    pub ilqg: BackwardOptions,
    pub mode: Mode,
    pub episodes: usize,
    pub seed: u64,
    pub out: Option<String>,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    /// Real steps between imagination triggers; `None` means once per episode.
    pub imagination_period: Option<usize>,
    pub imagination_samples: usize,
    pub fictional_capacity: usize,
    pub clear_fictional_on_refit: bool,
    pub target_return: Option<f64>,
    pub dump_transitions: bool,
    pub dump_model: bool,
    pub dump_gains: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            env: None,
            env_overrides: EnvOverrides::default(),
            hp: HyperParams::default(),
            noise: NoiseConfig::default(),
            ilqg: BackwardOptions::default(),
            mode: Mode::Naf,
            episodes: 500,
            seed: 0,
            out: None,
            eval_interval: 5,
            eval_episodes: 10,
            imagination_period: None,
            imagination_samples: 8,
            fictional_capacity: 100_000,
            clear_fictional_on_refit: false,
            target_return: None,
            dump_transitions: false,
            dump_model: false,
            dump_gains: false,
        }
    }
}

/// All recognized keys, in rendering order.
pub const KEYS: &[&str] = &[
    "env.name",
    "env.dt",
    "env.horizon",
    "env.init_std",
    "env.noise_std",
    "env.action_bound",
    "env.goal_weight",
    "env.velocity_weight",
    "env.action_weight",
    "env.point_dims",
    "naf.gamma",
    "naf.tau",
    "naf.updates_per_step",
    "naf.batch_size",
    "naf.learning_rate",
    "naf.hidden",
    "naf.head_init_scale",
    "naf.max_log_diag",
    "naf.replay_capacity",
    "explore.mode",
    "explore.sigma",
    "explore.ou_theta",
    "explore.ou_dt",
    "explore.c",
    "explore.precision_start_step",
    "explore.scale_rate",
    "ilqg.p",
    "ilqg.c",
    "ilqg.reg_min",
    "ilqg.reg_max",
    "train.mode",
    "train.episodes",
    "train.seed",
    "train.out",
    "train.eval_interval",
    "train.eval_episodes",
    "train.imagination_length",
    "train.imagination_period",
    "train.imagination_samples",
    "train.refit_episodes",
    "train.switch_off_episode",
    "train.fictional_capacity",
    "train.clear_fictional_on_refit",
    "train.target_return",
    "train.dump_transitions",
    "train.dump_model",
    "train.dump_gains",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: Display,
{
    value.parse::<T>().map_err(|e| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        msg: e.to_string(),
    })
}

/// `auto` / `none` map to `None`.
fn parse_opt<T: FromStr>(key: &str, value: &str, word: &str) -> Result<Option<T>, ConfigError>
where
    T::Err: Display,
{
    if value == word {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn show_opt<T: Display>(v: &Option<T>, word: &str) -> String {
    v.as_ref().map_or_else(|| word.to_string(), ToString::to_string)
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        let o = &mut self.env_overrides;
        match key {
            "env.name" => self.env = parse_opt(key, v, "none")?,
            "env.dt" => o.dt = parse_opt(key, v, "auto")?,
            "env.horizon" => o.horizon = parse_opt(key, v, "auto")?,
            "env.init_std" => o.init_std = parse_opt(key, v, "auto")?,
            "env.noise_std" => o.noise_std = parse_opt(key, v, "auto")?,
            "env.action_bound" => o.action_bound = parse_opt(key, v, "auto")?,
            "env.goal_weight" => o.goal_weight = parse_opt(key, v, "auto")?,
            "env.velocity_weight" => o.velocity_weight = parse_opt(key, v, "auto")?,
            "env.action_weight" => o.action_weight = parse_opt(key, v, "auto")?,
            "env.point_dims" => o.point_dims = parse_opt(key, v, "auto")?,
            "naf.gamma" => self.hp.gamma = parse(key, v)?,
            "naf.tau" => self.hp.tau = parse(key, v)?,
            "naf.updates_per_step" => self.hp.updates_per_step = parse(key, v)?,
            "naf.batch_size" => self.hp.batch_size = parse(key, v)?,
            "naf.learning_rate" => self.hp.learning_rate = parse(key, v)?,
            "naf.hidden" => {
                self.hp.hidden = v
                    .split(',')
                    .map(|s| parse::<usize>(key, s.trim()))
                    .collect::<Result<_, _>>()?
            }
            "naf.head_init_scale" => self.hp.head_init_scale = parse(key, v)?,
            "naf.max_log_diag" => self.hp.max_log_diag = parse(key, v)?,
            "naf.replay_capacity" => self.hp.replay_capacity = parse(key, v)?,
            "explore.mode" => self.noise.mode = parse::<NoiseMode>(key, v)?,
            "explore.sigma" => self.noise.sigma = parse(key, v)?,
            "explore.ou_theta" => self.noise.ou_theta = parse(key, v)?,
            "explore.ou_dt" => self.noise.ou_dt = parse(key, v)?,
            "explore.c" => self.noise.temperature = parse(key, v)?,
            "explore.precision_start_step" => self.noise.precision_start_step = parse(key, v)?,
            "explore.scale_rate" => self.noise.scale_rate = parse(key, v)?,
            "ilqg.p" => self.hp.policy_mix = parse(key, v)?,
            "ilqg.c" => {
                self.hp.temperature = parse(key, v)?;
                self.ilqg.temperature = self.hp.temperature;
            }
            "ilqg.reg_min" => self.ilqg.rho_min = parse(key, v)?,
            "ilqg.reg_max" => self.ilqg.rho_max = parse(key, v)?,
            "train.mode" => self.mode = parse::<Mode>(key, v)?,
            "train.episodes" => self.episodes = parse(key, v)?,
            "train.seed" => self.seed = parse(key, v)?,
            "train.out" => self.out = parse_opt(key, v, "none")?,
            "train.eval_interval" => self.eval_interval = parse(key, v)?,
            "train.eval_episodes" => self.eval_episodes = parse(key, v)?,
            "train.imagination_length" => self.hp.rollout_length = parse(key, v)?,
            "train.imagination_period" => self.imagination_period = parse_opt(key, v, "auto")?,
            "train.imagination_samples" => self.imagination_samples = parse(key, v)?,
            "train.refit_episodes" => self.hp.refit_episodes = parse(key, v)?,
            "train.switch_off_episode" => self.hp.switch_off_episode = parse_opt(key, v, "none")?,
            "train.fictional_capacity" => self.fictional_capacity = parse(key, v)?,
            "train.clear_fictional_on_refit" => self.clear_fictional_on_refit = parse(key, v)?,
            "train.target_return" => self.target_return = parse_opt(key, v, "none")?,
            "train.dump_transitions" => self.dump_transitions = parse(key, v)?,
            "train.dump_model" => self.dump_model = parse(key, v)?,
            "train.dump_gains" => self.dump_gains = parse(key, v)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let o = &self.env_overrides;
        let s = match key {
            "env.name" => show_opt(&self.env, "none"),
            "env.dt" => show_opt(&o.dt, "auto"),
            "env.horizon" => show_opt(&o.horizon, "auto"),
            "env.init_std" => show_opt(&o.init_std, "auto"),
            "env.noise_std" => show_opt(&o.noise_std, "auto"),
            "env.action_bound" => show_opt(&o.action_bound, "auto"),
            "env.goal_weight" => show_opt(&o.goal_weight, "auto"),
            "env.velocity_weight" => show_opt(&o.velocity_weight, "auto"),
            "env.action_weight" => show_opt(&o.action_weight, "auto"),
            "env.point_dims" => show_opt(&o.point_dims, "auto"),
            "naf.gamma" => self.hp.gamma.to_string(),
            "naf.tau" => self.hp.tau.to_string(),
            "naf.updates_per_step" => self.hp.updates_per_step.to_string(),
            "naf.batch_size" => self.hp.batch_size.to_string(),
            "naf.learning_rate" => self.hp.learning_rate.to_string(),
            "naf.hidden" => self.hp.hidden.iter().map(ToString::to_string).collect::<Vec<_>>().join(","),
            "naf.head_init_scale" => self.hp.head_init_scale.to_string(),
            "naf.max_log_diag" => self.hp.max_log_diag.to_string(),
            "naf.replay_capacity" => self.hp.replay_capacity.to_string(),
            "explore.mode" => self.noise.mode.to_string(),
            "explore.sigma" => self.noise.sigma.to_string(),
            "explore.ou_theta" => self.noise.ou_theta.to_string(),
            "explore.ou_dt" => self.noise.ou_dt.to_string(),
            "explore.c" => self.noise.temperature.to_string(),
            "explore.precision_start_step" => self.noise.precision_start_step.to_string(),
            "explore.scale_rate" => self.noise.scale_rate.to_string(),
            "ilqg.p" => self.hp.policy_mix.to_string(),
            "ilqg.c" => self.hp.temperature.to_string(),
            "ilqg.reg_min" => self.ilqg.rho_min.to_string(),
            "ilqg.reg_max" => self.ilqg.rho_max.to_string(),
            "train.mode" => self.mode.to_string(),
            "train.episodes" => self.episodes.to_string(),
            "train.seed" => self.seed.to_string(),
            "train.out" => show_opt(&self.out, "none"),
            "train.eval_interval" => self.eval_interval.to_string(),
            "train.eval_episodes" => self.eval_episodes.to_string(),
            "train.imagination_length" => self.hp.rollout_length.to_string(),
            "train.imagination_period" => show_opt(&self.imagination_period, "auto"),
            "train.imagination_samples" => self.imagination_samples.to_string(),
            "train.refit_episodes" => self.hp.refit_episodes.to_string(),
            "train.switch_off_episode" => show_opt(&self.hp.switch_off_episode, "none"),
            "train.fictional_capacity" => self.fictional_capacity.to_string(),
            "train.clear_fictional_on_refit" => self.clear_fictional_on_refit.to_string(),
            "train.target_return" => show_opt(&self.target_return, "none"),
            "train.dump_transitions" => self.dump_transitions.to_string(),
            "train.dump_model" => self.dump_model.to_string(),
            "train.dump_gains" => self.dump_gains.to_string(),
            _ => return None,
        };
        Some(s)
    }

    /// Applies `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: line.to_string(),
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    /// Applies a single `key=value` override.
    pub fn apply_assignment(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (k, v) = assignment.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: 0,
            text: assignment.to_string(),
        })?;
        self.set(k.trim(), v)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let value = self.get(key).expect("every listed key renders");
            out.push_str(key);
            out.push('=');
            out.push_str(&value);
            out.push('\n');
        }
        out
    }

    /// Range and mode-consistency checks, each naming the offending key.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, msg: String| Err(ConfigError::Invalid { key: key.into(), msg });
        match &self.env {
            None => return bad("env.name", "no environment given (use --env)".into()),
            Some(name) if !ENV_NAMES.contains(&name.as_str()) => {
                return bad("env.name", format!("unknown environment '{name}' (expected one of {ENV_NAMES:?})"))
            }
            _ => {}
        }
        let hp = &self.hp;
        if !(0.0..=1.0).contains(&hp.gamma) {
            return bad("naf.gamma", format!("must lie in [0, 1], got {}", hp.gamma));
        }
        if !(hp.tau > 0.0 && hp.tau <= 1.0) {
            return bad("naf.tau", format!("must lie in (0, 1], got {}", hp.tau));
        }
        if hp.updates_per_step == 0 {
            return bad("naf.updates_per_step", "must be at least 1".into());
        }
        if hp.batch_size == 0 {
            return bad("naf.batch_size", "must be at least 1".into());
        }
        if !(hp.learning_rate >= 0.0 && hp.learning_rate.is_finite()) {
            return bad("naf.learning_rate", format!("must be >= 0, got {}", hp.learning_rate));
        }
        if hp.hidden.is_empty() || hp.hidden.contains(&0) {
            return bad("naf.hidden", "layer sizes must be positive".into());
        }
        if !(hp.max_log_diag.is_finite()) {
            return bad("naf.max_log_diag", "must be finite".into());
        }
        if hp.replay_capacity == 0 {
            return bad("naf.replay_capacity", "must be positive".into());
        }
        if !(self.noise.sigma >= 0.0 && self.noise.sigma.is_finite()) {
            return bad("explore.sigma", format!("must be >= 0, got {}", self.noise.sigma));
        }
        if !(self.noise.ou_theta >= 0.0) {
            return bad("explore.ou_theta", "must be >= 0".into());
        }
        if !(self.noise.ou_dt > 0.0) {
            return bad("explore.ou_dt", "must be > 0".into());
        }
        if !(self.noise.temperature > 0.0) {
            return bad("explore.c", "must be > 0".into());
        }
        if !(self.noise.scale_rate > 0.0 && self.noise.scale_rate <= 1.0) {
            return bad("explore.scale_rate", "must lie in (0, 1]".into());
        }
        if !(0.0..=1.0).contains(&hp.policy_mix) {
            return bad("ilqg.p", format!("must lie in [0, 1], got {}", hp.policy_mix));
        }
        if !(hp.temperature > 0.0 && hp.temperature.is_finite()) {
            return bad("ilqg.c", format!("must be > 0, got {}", hp.temperature));
        }
        if !(self.ilqg.rho_min > 0.0 && self.ilqg.rho_max >= self.ilqg.rho_min) {
            return bad("ilqg.reg_min", "need 0 < reg_min <= reg_max".into());
        }
        if self.episodes == 0 {
            return bad("train.episodes", "must be at least 1".into());
        }
        if self.eval_interval == 0 {
            return bad("train.eval_interval", "must be at least 1".into());
        }
        if self.eval_episodes == 0 {
            return bad("train.eval_episodes", "must be at least 1".into());
        }
        if hp.refit_episodes == 0 {
            return bad("train.refit_episodes", "must be at least 1".into());
        }
        if self.imagination_period == Some(0) {
            return bad("train.imagination_period", "must be at least 1".into());
        }
        if self.fictional_capacity == 0 {
            return bad("train.fictional_capacity", "must be positive".into());
        }
        if self.mode.uses_imagination() && hp.rollout_length == 0 {
            return bad("train.imagination_length", format!("must be > 0 in mode {}", self.mode));
        }
        if self.mode.uses_ilqg() && hp.policy_mix >= 1.0 {
            return bad("ilqg.p", format!("must be < 1 in mode {}", self.mode));
        }
        if (self.mode.uses_imagination() || self.mode.uses_ilqg()) && hp.refit_episodes < 2 {
            return bad("train.refit_episodes", format!("must be at least 2 in mode {}", self.mode));
        }
        Ok(())
    }
}
