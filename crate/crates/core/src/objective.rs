//! Grouped advantages and the clipped, KL-regularised surrogate objective.
//!
//! Step advantages blend two normalised signals:
//!
//! ```text
//! A_traj[k]   = (R_k - mean(R)) / std(R)            over the K rollouts of one task
//! A_mr[t]     = (r_t - mean_tag) / std_tag          over all batch steps with the same tag
//! A[t]        = alpha * A_traj[k(t)] + (1 - alpha) * A_mr[t]
//! ```
//!
//! Standard deviations are population deviations; a group whose spread is
//! below [`ZERO_SPREAD`] carries no signal and maps to zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tags::MetaTag;

pub const ZERO_SPREAD: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub epsilon_clip: f64,
    pub lambda_kl: f64,
    /// Weight of the trajectory advantage in the blend.
    pub alpha: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            epsilon_clip: 0.2,
            lambda_kl: 0.01,
            alpha: 0.5,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_clip.is_finite() && self.epsilon_clip > 0.0) {
            return Err(Error::Config(format!(
                "epsilon_clip must be > 0, got {}",
                self.epsilon_clip
            )));
        }
        if !(self.lambda_kl.is_finite() && self.lambda_kl >= 0.0) {
            return Err(Error::Config(format!(
                "lambda_kl must be >= 0, got {}",
                self.lambda_kl
            )));
        }
        check_alpha(self.alpha)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )))
    }
}

/// Population z-scores; all zeros when the spread is below [`ZERO_SPREAD`].
pub fn normalize(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    if values.len() < 2 {
        return vec![0.0; values.len()];
    }
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < ZERO_SPREAD {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - mean) / std).collect()
}

/// Outcome advantages for the K rollouts of one task.
pub fn trajectory_advantages(outcomes: &[f64]) -> Result<Vec<f64>> {
    if outcomes.len() < 2 {
        return Err(Error::Usage(format!(
            "trajectory normalisation needs at least 2 rollouts, got {}",
            outcomes.len()
        )));
    }
    Ok(normalize(outcomes))
}

/// Per-tag normalised step rewards, grouping every step in the batch by tag.
pub fn tag_advantages(steps: &[(MetaTag, f64)]) -> Vec<f64> {
    let mut out = vec![0.0; steps.len()];
    for tag in MetaTag::ALL {
        let idx: Vec<usize> = (0..steps.len()).filter(|&i| steps[i].0 == tag).collect();
        let vals: Vec<f64> = idx.iter().map(|&i| steps[i].1).collect();
        for (i, a) in idx.into_iter().zip(normalize(&vals)) {
            out[i] = a;
        }
    }
    out
}

pub fn blend(a_traj: f64, a_mr: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(alpha * a_traj + (1.0 - alpha) * a_mr)
}

/// Scores for one rollout group (K trajectories of the same task).
#[derive(Debug, Clone, PartialEq)]
pub struct GroupScores {
    pub outcomes: Vec<f64>,
    /// For every trajectory, the (tag, step reward) of each step.
    pub steps: Vec<Vec<(MetaTag, f64)>>,
}

/// Advantages for a whole batch, flattened in (group, trajectory, step)
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageBatch {
    pub alpha: f64,
    /// Final blended advantage per step.
    pub step: Vec<f64>,
    /// Outcome advantage per trajectory.
    pub trajectory: Vec<f64>,
    /// Tag-normalised advantage per step.
    pub meta: Vec<f64>,
    /// Trajectory index of each step.
    pub step_trajectory: Vec<usize>,
}

pub fn compute_advantages(groups: &[GroupScores], alpha: f64) -> Result<AdvantageBatch> {
    check_alpha(alpha)?;
    let mut trajectory = Vec::new();
    let mut flat_steps = Vec::new();
    let mut step_trajectory = Vec::new();
    for g in groups {
        if g.outcomes.len() != g.steps.len() {
            return Err(Error::Usage(
                "outcome and step lists differ in length".into(),
            ));
        }
        for steps in &g.steps {
            for &s in steps {
                flat_steps.push(s);
                step_trajectory.push(trajectory.len());
            }
            trajectory.push(0.0);
        }
        let base = trajectory.len() - g.outcomes.len();
        for (k, a) in trajectory_advantages(&g.outcomes)?.into_iter().enumerate() {
            trajectory[base + k] = a;
        }
    }
    let meta = tag_advantages(&flat_steps);
    let step = step_trajectory
        .iter()
        .zip(&meta)
        .map(|(&k, &m)| blend(trajectory[k], m, alpha))
        .collect::<Result<Vec<_>>>()?;
    Ok(AdvantageBatch {
        alpha,
        step,
        trajectory,
        meta,
        step_trajectory,
    })
}

/// Objective value and its gradient with respect to every step's logits.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateValue {
    pub loss: f64,
    pub surrogate: f64,
    pub kl: f64,
    /// Fraction of steps where the clipped branch is active.
    pub clip_fraction: f64,
    pub d_logits: Vec<Vec<f64>>,
}

/// Inputs for one step of the surrogate objective.
#[derive(Debug, Clone, Copy)]
pub struct SurrogateStep<'a> {
    pub advantage: f64,
    pub choice: usize,
    pub logprob_old: f64,
    /// Current-policy log-probabilities over the step's full support.
    pub logp: &'a [f64],
    /// Reference-policy log-probabilities over the same support.
    pub ref_logp: &'a [f64],
}

/// `loss = -mean_t min(ρ_t A_t, clip(ρ_t, 1-ε, 1+ε) A_t) + λ_KL mean_t KL(π_θ || π_ref)`
/// with `ρ_t = exp(logp[a_t] - logprob_old)` and the KL summed exactly over
/// each step's finite support.
pub fn surrogate_loss(steps: &[SurrogateStep<'_>], cfg: &LossConfig) -> Result<SurrogateValue> {
    cfg.validate()?;
    if steps.is_empty() {
        return Err(Error::Usage("empty batch".into()));
    }
    let n = steps.len() as f64;
    let mut surrogate = 0.0;
    let mut kl_total = 0.0;
    let mut clipped = 0usize;
    let mut d_logits = Vec::with_capacity(steps.len());
    for s in steps {
        if s.logp.len() != s.ref_logp.len() || s.choice >= s.logp.len() {
            return Err(Error::Usage("misaligned step support".into()));
        }
        if s.logp.iter().chain(s.ref_logp).any(|v| v.is_nan()) || !s.logprob_old.is_finite() {
            return Err(Error::Numerical("non-finite log-probability".into()));
        }
        let ratio = (s.logp[s.choice] - s.logprob_old).exp();
        let a = s.advantage;
        let clip_ratio = ratio.clamp(1.0 - cfg.epsilon_clip, 1.0 + cfg.epsilon_clip);
        let unclipped = ratio * a;
        let clipped_term = clip_ratio * a;
        // d(term)/d(logp[a_t]); zero when the clipped branch is the minimum
        let (term, g) = if clipped_term < unclipped {
            clipped += 1;
            (clipped_term, 0.0)
        } else {
            (unclipped, unclipped)
        };
        surrogate += term;

        let probs: Vec<f64> = s.logp.iter().map(|l| l.exp()).collect();
        let kl: f64 = probs
            .iter()
            .zip(s.logp.iter().zip(s.ref_logp))
            .map(|(p, (lp, lq))| if *p > 0.0 { p * (lp - lq) } else { 0.0 })
            .sum();
        kl_total += kl;

        let d: Vec<f64> = probs
            .iter()
            .enumerate()
            .map(|(j, &p)| {
                let onehot = (j == s.choice) as u8 as f64;
                let d_sur = -g * (onehot - p) / n;
                let d_kl = if p > 0.0 {
                    cfg.lambda_kl * p * (s.logp[j] - s.ref_logp[j] - kl) / n
                } else {
                    0.0
                };
                d_sur + d_kl
            })
            .collect();
        d_logits.push(d);
    }
    let surrogate = surrogate / n;
    let kl = kl_total / n;
    let loss = -surrogate + cfg.lambda_kl * kl;
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("non-finite loss {loss}")));
    }
    Ok(SurrogateValue {
        loss,
        surrogate,
        kl,
        clip_fraction: clipped as f64 / n,
        d_logits,
    })
}
