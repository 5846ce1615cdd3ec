//! Episode records shared by rollouts, demonstrations, scoring and logs.

use serde::{Deserialize, Serialize};

use crate::env::{TaskSpec, NOTHING_HAPPENS};
use crate::tags::ParsedStep;

/// One agent turn and its effect on the environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step_index: u32,
    /// Fingerprint of the state the action was issued from.
    pub state_fingerprint: u64,
    /// Raw model output for the turn.
    pub output_text: String,
    pub parsed: ParsedStep,
    /// Observation produced by the action.
    pub observation: String,
    pub next_fingerprint: u64,
    /// Log-probability of the sampled (tag, action) choice under the
    /// rollout-time policy; zero for demonstrations.
    pub logprob_old: f64,
}

impl StepRecord {
    pub fn action(&self) -> &str {
        &self.parsed.action
    }

    /// The action was rejected by the environment.
    pub fn is_invalid(&self) -> bool {
        self.observation == NOTHING_HAPPENS
    }

    /// Failure in the sense of the reflection rule: rejected or malformed.
    pub fn is_failure(&self) -> bool {
        self.is_invalid() || !self.parsed.format_ok
    }

    pub fn changed_state(&self) -> bool {
        self.state_fingerprint != self.next_fingerprint
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task: TaskSpec,
    pub initial_observation: String,
    pub initial_fingerprint: u64,
    pub steps: Vec<StepRecord>,
    pub done: bool,
    pub success: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// The observation the agent saw before taking step `t`.
    pub fn observation_before(&self, t: usize) -> &str {
        if t == 0 {
            &self.initial_observation
        } else {
            &self.steps[t - 1].observation
        }
    }
}
