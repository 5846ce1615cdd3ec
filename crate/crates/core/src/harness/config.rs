//! Training configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expert::ExpertConfig;
use crate::objective::LossConfig;
use crate::policy::FeatureConfig;
use crate::reward::RewardConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Distinct tasks sampled per optimizer step.
    pub n_envs_per_step: usize,
    /// Rollouts per task (group size K).
    pub rollouts_per_env: usize,
    pub rl_epochs: usize,
    /// Gradient steps taken on each collected batch.
    pub updates_per_epoch: usize,
    pub rl_lr: f64,
    pub bc_demos: usize,
    pub bc_epochs: usize,
    pub bc_lr: f64,
    /// Start RL from the behaviour-cloned checkpoint; when false, from zero
    /// weights (which then also serve as the reference policy).
    pub cold_start: bool,
    pub max_steps: u32,
    /// Probability that a sampled step is rendered without its tag pair.
    pub p_noise: f64,
    pub master_seed: u64,
    /// Tasks per split during evaluation.
    pub eval_tasks: usize,
    /// Seed for generating evaluation task lists.
    pub eval_seed: u64,
    /// Write a checkpoint every this many RL epochs (0 = final only).
    pub checkpoint_every: usize,
    pub loss: LossConfig,
    pub reward: RewardConfig,
    pub expert: ExpertConfig,
    pub features: FeatureConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_envs_per_step: 16,
            rollouts_per_env: 8,
            rl_epochs: 100,
            updates_per_epoch: 1,
            rl_lr: 0.05,
            bc_demos: 200,
            bc_epochs: 5,
            bc_lr: 0.1,
            cold_start: true,
            max_steps: crate::env::MAX_STEPS,
            p_noise: 0.02,
            master_seed: 0,
            eval_tasks: 128,
            eval_seed: 20_250_731,
            checkpoint_every: 0,
            loss: LossConfig::default(),
            reward: RewardConfig::default(),
            expert: ExpertConfig::default(),
            features: FeatureConfig::default(),
        }
    }
}

/// Named training recipes; each is a pure configuration change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arm {
    /// Outcome and meta-reasoning advantages, cold start.
    Full,
    /// Outcome advantage only (`alpha = 1`, process rewards off).
    VanillaGrpo,
    /// Meta-reasoning advantage only (`alpha = 0`).
    NoOutcome,
    /// Full objective without the behaviour-cloning phase.
    NoColdStart,
}

impl Arm {
    pub const ALL: [Arm; 4] = [
        Arm::Full,
        Arm::VanillaGrpo,
        Arm::NoOutcome,
        Arm::NoColdStart,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Full => "full",
            Arm::VanillaGrpo => "vanilla-grpo",
            Arm::NoOutcome => "no-outcome",
            Arm::NoColdStart => "no-cold-start",
        }
    }

    pub fn configure(self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        match self {
            Arm::Full => {}
            Arm::VanillaGrpo => {
                cfg.loss.alpha = 1.0;
                cfg.reward = RewardConfig {
                    r_success: base.reward.r_success,
                    failure_window: base.reward.failure_window,
                    ..RewardConfig::outcome_only()
                };
            }
            Arm::NoOutcome => cfg.loss.alpha = 0.0,
            Arm::NoColdStart => cfg.cold_start = false,
        }
        cfg
    }
}

impl std::str::FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Arm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode `{s}`")))
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_envs_per_step", self.n_envs_per_step),
            ("rl_epochs", self.rl_epochs),
            ("updates_per_epoch", self.updates_per_epoch),
            ("bc_demos", self.bc_demos),
            ("bc_epochs", self.bc_epochs),
            ("eval_tasks", self.eval_tasks),
            ("max_steps", self.max_steps as usize),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.rollouts_per_env < 2 {
            return Err(Error::Config("rollouts_per_env must be at least 2".into()));
        }
        for (name, v) in [("rl_lr", self.rl_lr), ("bc_lr", self.bc_lr)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.p_noise) {
            return Err(Error::Config(format!(
                "p_noise must lie in [0, 1], got {}",
                self.p_noise
            )));
        }
        if !(0.0..=1.0).contains(&self.expert.p_fail) {
            return Err(Error::Config(format!(
                "p_fail must lie in [0, 1], got {}",
                self.expert.p_fail
            )));
        }
        self.loss.validate()?;
        self.reward.validate()?;
        self.features.validate()
    }

    /// Reads a TOML file; absent keys keep their defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: TrainConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }
}
