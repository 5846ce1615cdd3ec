//! Verifiable process rewards.
//!
//! Rewards come from deterministic rules over a finished trajectory:
//!
//! * outcome: `r_success` on success, otherwise 0;
//! * `<planning>` steps earn `r_planning` when the episode succeeds;
//! * `<explore>` steps earn `r_explore` when their action targets an entity
//!   not targeted earlier in the episode;
//! * `<reflection>` steps earn `r_reflection` when they follow at least
//!   `failure_window` consecutive failures and either they or the next step
//!   take a corrective action;
//! * `<monitor>` steps earn nothing;
//! * malformed steps earn `-lambda_format` and no meta-reasoning reward.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tags::MetaTag;
use crate::trajectory::{StepRecord, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub r_success: f64,
    pub r_planning: f64,
    pub r_explore: f64,
    pub r_reflection: f64,
    /// Magnitude of the format penalty; applied as `-lambda_format`.
    pub lambda_format: f64,
    pub failure_window: u32,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            r_success: 1.0,
            r_planning: 0.1,
            r_explore: 0.1,
            r_reflection: 0.1,
            lambda_format: 0.1,
            failure_window: 2,
        }
    }
}

impl RewardConfig {
    /// Outcome reward only: every process reward and the format penalty off.
    pub fn outcome_only() -> Self {
        Self {
            r_planning: 0.0,
            r_explore: 0.0,
            r_reflection: 0.0,
            lambda_format: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mags = [
            ("r_success", self.r_success),
            ("r_planning", self.r_planning),
            ("r_explore", self.r_explore),
            ("r_reflection", self.r_reflection),
            ("lambda_format", self.lambda_format),
        ];
        for (name, v) in mags {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if self.failure_window == 0 {
            return Err(Error::Config("failure_window must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-step reward split into its meta-reasoning and format parts.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepReward {
    pub mr: f64,
    pub format: f64,
    pub total: f64,
}

impl StepReward {
    fn new(mr: f64, format: f64) -> Self {
        Self {
            mr,
            format,
            total: mr + format,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryScore {
    pub outcome: f64,
    pub steps: Vec<StepReward>,
}

/// Running per-episode state used by the reward rules and by the policy's
/// features.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryContext {
    pub visited_targets: HashSet<String>,
    pub consecutive_failures: u32,
    /// Fingerprint of the current state followed by earlier ones, oldest first.
    pub fingerprints: Vec<u64>,
    pub last_action: Option<String>,
    pub last_failed: bool,
    /// `(state fingerprint, action)` pairs already issued this episode.
    pub tried: HashSet<(u64, String)>,
}

impl TrajectoryContext {
    pub fn new(initial_fingerprint: u64) -> Self {
        Self {
            fingerprints: vec![initial_fingerprint],
            ..Self::default()
        }
    }

    pub fn is_visited(&self, action: &str) -> bool {
        extract_target(action).is_some_and(|t| self.visited_targets.contains(&t))
    }

    /// Folds a finished step into the context.
    pub fn record(&mut self, step: &StepRecord) {
        if let Some(t) = extract_target(step.action()) {
            self.visited_targets.insert(t);
        }
        if step.is_failure() {
            self.consecutive_failures += 1;
        } else {
            self.consecutive_failures = 0;
        }
        self.last_failed = step.is_failure();
        self.last_action = Some(step.action().to_string());
        self.tried
            .insert((step.state_fingerprint, step.action().to_string()));
        self.fingerprints.push(step.next_fingerprint);
    }
}

const TARGET_VERBS: [&str; 9] = [
    "take", "put", "open", "close", "use", "clean", "heat", "cool", "examine",
];

/// Read-only information-gathering actions.
pub fn is_info_action(action: &str) -> bool {
    let a = action.trim();
    a == "look" || a == "inventory" || a.starts_with("examine ")
}

/// The entity an action targets: the receptacle for navigation and
/// open/close, the first object for manipulation and treatment. `None` for
/// look, inventory, wait and unrecognised commands.
pub fn extract_target(action_text: &str) -> Option<String> {
    let a = action_text.trim();
    let rest = match a.strip_prefix("go to ") {
        Some(r) => r,
        None => {
            let (verb, rest) = a.split_once(' ')?;
            if !TARGET_VERBS.contains(&verb) {
                return None;
            }
            rest
        }
    };
    let mut toks = rest.split_whitespace();
    let noun = toks.next()?;
    let index = toks.next()?;
    if noun.is_empty() || !index.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Some(format!("{noun} {index}"))
}

/// Whether step `j` corrects a failure whose last failed action was `failed`.
fn is_corrective(traj: &Trajectory, j: usize, failed: &str) -> bool {
    let s = &traj.steps[j];
    if s.is_invalid() || s.action() == failed {
        return false;
    }
    s.changed_state() || (is_info_action(s.action()) && s.observation != traj.observation_before(j))
}

/// Scores a finished trajectory.
pub fn score_trajectory(traj: &Trajectory, cfg: &RewardConfig) -> Result<TrajectoryScore> {
    if !traj.done {
        return Err(Error::Usage("cannot score an unfinished trajectory".into()));
    }
    let mut ctx = TrajectoryContext::new(traj.initial_fingerprint);
    let mut steps = Vec::with_capacity(traj.steps.len());
    for (t, s) in traj.steps.iter().enumerate() {
        let mr = if !s.parsed.format_ok {
            0.0
        } else {
            match s.parsed.tag {
                MetaTag::Planning if traj.success => cfg.r_planning,
                MetaTag::Planning => 0.0,
                MetaTag::Explore => match extract_target(s.action()) {
                    Some(e) if !ctx.visited_targets.contains(&e) => cfg.r_explore,
                    _ => 0.0,
                },
                MetaTag::Reflection => {
                    let after_failures = ctx.consecutive_failures >= cfg.failure_window;
                    let corrected = after_failures && {
                        let failed = traj.steps[t - 1].action();
                        is_corrective(traj, t, failed)
                            || (t + 1 < traj.steps.len() && is_corrective(traj, t + 1, failed))
                    };
                    if corrected {
                        cfg.r_reflection
                    } else {
                        0.0
                    }
                }
                MetaTag::Monitor => 0.0,
            }
        };
        let format = if s.parsed.format_ok {
            0.0
        } else {
            -cfg.lambda_format
        };
        steps.push(StepReward::new(mr, format));
        ctx.record(s);
    }
    Ok(TrajectoryScore {
        outcome: if traj.success { cfg.r_success } else { 0.0 },
        steps,
    })
}
