//! Running a policy through the environment.

use rand::Rng;

use crate::env::{MiniWorld, TaskSpec};
use crate::error::Result;
use crate::policy::{distribution, render_choice, Decision, PolicyParams};
use crate::reward::TrajectoryContext;
use crate::tags;
use crate::trajectory::{StepRecord, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decoding {
    /// Sample from the policy; drop the tag pair with probability `p_noise`.
    Sample { p_noise: f64 },
    /// Take the most probable choice, always well-formed.
    Greedy,
}

/// A finished episode with the decision point behind every step.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub trajectory: Trajectory,
    pub decisions: Vec<Decision>,
    /// Index of the chosen (tag, action) pair in each decision.
    pub choices: Vec<usize>,
}

pub fn run_episode(
    task: &TaskSpec,
    params: &PolicyParams,
    decoding: Decoding,
    max_steps: u32,
    rng: &mut impl Rng,
) -> Result<Rollout> {
    let mut env = MiniWorld::with_max_steps(max_steps);
    let initial = env.reset(task)?;
    let mut obs = initial.clone();
    let mut ctx = TrajectoryContext::new(obs.state_fingerprint);
    let mut steps = Vec::new();
    let mut decisions = Vec::new();
    let mut choices = Vec::new();
    let mut success = false;
    while !env.is_done() {
        let dist = distribution(&obs, &ctx, params)?;
        let (j, p_noise) = match decoding {
            Decoding::Sample { p_noise } => (dist.sample(rng), p_noise),
            Decoding::Greedy => (dist.argmax(), 0.0),
        };
        let sampled = render_choice(&dist, j, &obs.view, p_noise, rng);
        let parsed = tags::parse(&sampled.output_text);
        let out = env.step(&parsed.action)?;
        let record = StepRecord {
            step_index: steps.len() as u32,
            state_fingerprint: obs.state_fingerprint,
            output_text: sampled.output_text,
            parsed,
            observation: out.observation.text.clone(),
            next_fingerprint: out.observation.state_fingerprint,
            logprob_old: sampled.logprob,
        };
        ctx.record(&record);
        steps.push(record);
        decisions.push(dist.decision);
        choices.push(j);
        success = out.success;
        obs = out.observation;
    }
    Ok(Rollout {
        trajectory: Trajectory {
            task: task.clone(),
            initial_observation: initial.text,
            initial_fingerprint: initial.state_fingerprint,
            steps,
            done: true,
            success,
        },
        decisions,
        choices,
    })
}
