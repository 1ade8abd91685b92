//! Run configuration: the variant matrix, per-level hyperparameters, and the
//! JSON config-file format (unknown keys are rejected).

use serde::{Deserialize, Serialize};
use shiro_core::soft_rl::{AgentLevelConfig, PolicyKindConfig};

use crate::TrainError;

/// Which agent layout and entropy placement a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
#[clap(rename_all = "kebab-case")]
pub enum Variant {
    /// Deterministic policies at both levels.
    Hiro,
    /// Stochastic high level, deterministic low level.
    ShiroHl,
    /// Deterministic high level, stochastic low level.
    ShiroLl,
    /// Stochastic policies at both levels.
    ShiroBl,
    /// Single stochastic agent conditioned directly on the episode goal.
    FlatSac,
}

impl Variant {
    pub fn is_hierarchical(self) -> bool {
        !matches!(self, Variant::FlatSac)
    }

    pub fn high_policy_kind(self) -> PolicyKindConfig {
        match self {
            Variant::ShiroHl | Variant::ShiroBl => PolicyKindConfig::SquashedGaussian,
            _ => PolicyKindConfig::Deterministic,
        }
    }

    pub fn low_policy_kind(self) -> PolicyKindConfig {
        match self {
            Variant::ShiroLl | Variant::ShiroBl | Variant::FlatSac => {
                PolicyKindConfig::SquashedGaussian
            }
            _ => PolicyKindConfig::Deterministic,
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Hiro => "hiro",
            Variant::ShiroHl => "shiro-hl",
            Variant::ShiroLl => "shiro-ll",
            Variant::ShiroBl => "shiro-bl",
            Variant::FlatSac => "flat-sac",
        })
    }
}

/// Constant or learned entropy temperature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
#[clap(rename_all = "kebab-case")]
pub enum TemperatureMode {
    Const,
    Learned,
}

/// Optional per-level hyperparameter overrides; anything left out keeps the
/// level's defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LevelOverrides {
    pub target_entropy: Option<f64>,
    pub train_interval: Option<usize>,
    pub target_update_interval: Option<usize>,
    pub actor_delay: Option<u64>,
    pub gamma: Option<f64>,
    pub alpha_kl: Option<f64>,
    pub actor_lr: Option<f64>,
    pub critic_lr: Option<f64>,
    pub temperature_lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub hidden: Option<Vec<usize>>,
    pub reward_scale: Option<f64>,
    pub exploration_sigma_rel: Option<f64>,
    pub exploration_sigma_abs: Option<Vec<f64>>,
    pub smoothing_sigma_rel: Option<f64>,
    pub smoothing_clip_rel: Option<f64>,
    pub tau: Option<f64>,
}

impl LevelOverrides {
    fn apply(&self, base: &mut AgentLevelConfig) {
        macro_rules! patch {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field { base.$field = v.clone(); })*
            };
        }
        patch!(
            train_interval,
            target_update_interval,
            actor_delay,
            gamma,
            alpha_kl,
            actor_lr,
            critic_lr,
            temperature_lr,
            batch_size,
            hidden,
            reward_scale,
            exploration_sigma_rel,
            smoothing_sigma_rel,
            smoothing_clip_rel,
            tau
        );
        if self.target_entropy.is_some() {
            base.target_entropy = self.target_entropy;
        }
        if self.exploration_sigma_abs.is_some() {
            base.exploration_sigma_abs = self.exploration_sigma_abs.clone();
        }
    }
}

/// Complete description of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub env_name: String,
    pub variant: Variant,
    pub temperature_mode_high: TemperatureMode,
    pub temperature_mode_low: TemperatureMode,
    pub alpha_high_init: f64,
    pub alpha_low_init: f64,
    /// Sub-goal interval: the high level acts every `c` environment steps.
    pub c: usize,
    pub total_env_steps: u64,
    pub seed: u64,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    /// Soft KL-penalty coefficient on the action-level policy; 0 disables.
    pub alpha_kl: f64,
    pub replay_capacity: usize,
    /// Probe batch size for KL measurements.
    pub kl_probe_size: usize,
    pub low: LevelOverrides,
    pub high: LevelOverrides,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env_name: "point_maze".into(),
            variant: Variant::ShiroHl,
            temperature_mode_high: TemperatureMode::Learned,
            temperature_mode_low: TemperatureMode::Const,
            alpha_high_init: 1.0,
            alpha_low_init: 0.1,
            c: 10,
            total_env_steps: 300_000,
            seed: 0,
            eval_interval: 5_000,
            eval_episodes: 10,
            alpha_kl: 0.0,
            replay_capacity: 200_000,
            kl_probe_size: 256,
            low: LevelOverrides::default(),
            high: LevelOverrides::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        let cfg: Self = serde_json::from_str(text)
            .map_err(|e| TrainError::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TrainError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |msg: String| Err(TrainError::Config(msg));
        if self.c == 0 {
            return fail("c must be positive".into());
        }
        if self.eval_interval == 0 {
            return fail("eval_interval must be positive".into());
        }
        if self.eval_episodes == 0 {
            return fail("eval_episodes must be positive".into());
        }
        if self.alpha_kl < 0.0 {
            return fail("alpha_kl must be non-negative".into());
        }
        if self.alpha_high_init <= 0.0 || self.alpha_low_init <= 0.0 {
            return fail("initial temperatures must be positive".into());
        }
        if self.replay_capacity == 0 {
            return fail("replay_capacity must be positive".into());
        }
        if self.kl_probe_size == 0 {
            return fail("kl_probe_size must be positive".into());
        }
        for (name, cfg) in [("low", self.low_level_config()), ("high", self.high_level_config())] {
            cfg.validate()
                .map_err(|e| TrainError::Config(format!("{name} level: {e}")))?;
        }
        Ok(())
    }

    /// Resolved action-level configuration (also used by the flat agent).
    pub fn low_level_config(&self) -> AgentLevelConfig {
        let mut cfg = AgentLevelConfig::low_defaults();
        cfg.policy_kind = self.variant.low_policy_kind();
        cfg.alpha_init = self.alpha_low_init;
        cfg.alpha_learnable = self.temperature_mode_low == TemperatureMode::Learned;
        cfg.alpha_kl = self.alpha_kl;
        self.low.apply(&mut cfg);
        cfg
    }

    /// Resolved sub-goal-level configuration.
    pub fn high_level_config(&self) -> AgentLevelConfig {
        let mut cfg = AgentLevelConfig::high_defaults();
        cfg.policy_kind = self.variant.high_policy_kind();
        cfg.alpha_init = self.alpha_high_init;
        cfg.alpha_learnable = self.temperature_mode_high == TemperatureMode::Learned;
        self.high.apply(&mut cfg);
        cfg
    }

    /// Everything except the run length must match for a checkpoint resume.
    pub fn compatible_for_resume(&self, other: &Self) -> bool {
        let mut a = self.clone();
        let mut b = other.clone();
        a.total_env_steps = 0;
        b.total_env_steps = 0;
        a == b
    }
}
