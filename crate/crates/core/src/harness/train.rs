//! Cold start, reinforcement learning and evaluation drivers.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::TrainConfig;
use super::log::TrajectoryLogWriter;
use super::metrics::{episode_counts, MetricsReport, SplitMetrics};
use super::rollout::{run_episode, Decoding, Rollout};
use crate::env::{generate_split, sample_training_tasks, Split, TaskSpec};
use crate::error::{Error, Result};
use crate::expert;
use crate::objective::{
    compute_advantages, surrogate_loss, AdvantageBatch, GroupScores, SurrogateStep,
};
use crate::policy::{bc_update, PolicyParams};
use crate::reward::{score_trajectory, RewardConfig, TrajectoryScore};
use crate::tags::MetaTag;
use crate::trajectory::Trajectory;

/// Derives an independent stream seed from the master seed and a path of
/// labels.
pub fn stream_seed(master: u64, path: &[u64]) -> u64 {
    let mut h = master ^ 0x9e37_79b9_7f4a_7c15;
    for &p in path {
        h = splitmix(h ^ splitmix(p.wrapping_add(0x632b_e59b_d9b4_e019)));
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const STREAM_DEMO_TASKS: u64 = 1;
const STREAM_DEMO_FAILURES: u64 = 2;
const STREAM_BC: u64 = 3;
const STREAM_EPOCH_TASKS: u64 = 4;
const STREAM_ROLLOUT: u64 = 5;

#[derive(Debug, Clone)]
pub struct ColdStart {
    pub params: PolicyParams,
    /// Mean demonstration NLL before training and after each epoch.
    pub bc_losses: Vec<f64>,
    pub demo_steps: usize,
    pub demos: Vec<Trajectory>,
}

impl ColdStart {
    /// Writes the demonstrations in the rollout log format.
    pub fn write_demo_log(&self, path: &Path, reward: &RewardConfig) -> Result<()> {
        let mut w = TrajectoryLogWriter::create(path)?;
        for d in &self.demos {
            w.write(d, &score_trajectory(d, reward)?)?;
        }
        w.finish()
    }
}

/// Behaviour cloning on expert demonstrations of training tasks.
pub fn cold_start(cfg: &TrainConfig) -> Result<ColdStart> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.master_seed, &[STREAM_DEMO_TASKS]));
    let tasks = sample_training_tasks(&mut rng, cfg.bc_demos)?;
    let demos = expert::demonstrations(
        &tasks,
        &cfg.expert,
        stream_seed(cfg.master_seed, &[STREAM_DEMO_FAILURES]),
    )?;
    let demo_steps = demos.iter().map(|d| d.len()).sum();
    let start = PolicyParams::zeros(cfg.features.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.master_seed, &[STREAM_BC]));
    let (params, bc_losses) = bc_update(&demos, &start, cfg.bc_epochs, cfg.bc_lr, &mut rng)?;
    Ok(ColdStart {
        params,
        bc_losses,
        demo_steps,
        demos,
    })
}

/// The policy RL starts from: the cold-start checkpoint, or zero weights.
pub fn initial_policy(cfg: &TrainConfig) -> Result<PolicyParams> {
    if cfg.cold_start {
        Ok(cold_start(cfg)?.params)
    } else {
        PolicyParams::zeros(cfg.features.clone())
    }
}

/// Where a training run writes its artifacts.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub dir: PathBuf,
    /// Also write every rollout to `rollouts.jsonl`.
    pub log_rollouts: bool,
}

impl RunOutput {
    pub fn metrics_path(&self) -> PathBuf {
        self.dir.join("metrics.csv")
    }

    pub fn final_checkpoint(&self) -> PathBuf {
        self.dir.join("policy.json")
    }

    pub fn rollout_log(&self) -> PathBuf {
        self.dir.join("rollouts.jsonl")
    }
}

/// Per-epoch training statistics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Split of the tasks rolled out this epoch (always L0 during training).
    pub split: Split,
    pub episodes: u64,
    pub mean_outcome: f64,
    pub success_rate: f64,
    pub invalid_action_rate: f64,
    pub repetitive_action_rate: f64,
    pub mean_actions: f64,
    pub mean_mr_reward: f64,
    pub format_penalties: u64,
    /// Steps per tag, in tag order.
    pub tag_steps: [u64; 4],
    pub loss: f64,
    pub kl: f64,
    pub clip_fraction: f64,
}

const CSV_HEADER: &str = "epoch,split,episodes,mean_outcome,success_rate,invalid_action_rate,repetitive_action_rate,mean_actions,mean_mr_reward,format_penalties,planning_steps,explore_steps,reflection_steps,monitor_steps,loss,kl,clip_fraction";

impl EpochStats {
    fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.split.as_str(),
            self.episodes,
            self.mean_outcome,
            self.success_rate,
            self.invalid_action_rate,
            self.repetitive_action_rate,
            self.mean_actions,
            self.mean_mr_reward,
            self.format_penalties,
            self.tag_steps[0],
            self.tag_steps[1],
            self.tag_steps[2],
            self.tag_steps[3],
            self.loss,
            self.kl,
            self.clip_fraction
        )
    }
}

#[derive(Debug, Clone)]
pub struct RlOutcome {
    pub params: PolicyParams,
    pub history: Vec<EpochStats>,
    /// Metrics over every training rollout, as `analyze` would report them.
    pub rollout_metrics: MetricsReport,
}

/// Group-relative policy optimisation from `start`, regularised towards
/// `reference`.
pub fn train_rl(
    cfg: &TrainConfig,
    start: &PolicyParams,
    reference: &PolicyParams,
    out: Option<&RunOutput>,
) -> Result<RlOutcome> {
    cfg.validate()?;
    if start.weights.len() != reference.weights.len() || start.features != reference.features {
        return Err(Error::Usage(
            "start and reference policies use different feature spaces".into(),
        ));
    }
    let mut csv = String::new();
    let mut log = None;
    if let Some(o) = out {
        fs::create_dir_all(&o.dir).map_err(|e| Error::io(&o.dir, e))?;
        csv.push_str(CSV_HEADER);
        csv.push('\n');
        if o.log_rollouts {
            log = Some(TrajectoryLogWriter::create(&o.rollout_log())?);
        }
    }
    let mut params = start.clone();
    let mut history = Vec::with_capacity(cfg.rl_epochs);
    let mut counts = Vec::new();
    for epoch in 0..cfg.rl_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(
            cfg.master_seed,
            &[STREAM_EPOCH_TASKS, epoch as u64],
        ));
        let tasks = sample_training_tasks(&mut rng, cfg.n_envs_per_step)?;
        let mut rollouts = Vec::with_capacity(tasks.len() * cfg.rollouts_per_env);
        for (e, task) in tasks.iter().enumerate() {
            for k in 0..cfg.rollouts_per_env {
                let seed = stream_seed(
                    cfg.master_seed,
                    &[STREAM_ROLLOUT, epoch as u64, e as u64, k as u64],
                );
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let decoding = Decoding::Sample {
                    p_noise: cfg.p_noise,
                };
                rollouts.push(run_episode(
                    task,
                    &params,
                    decoding,
                    cfg.max_steps,
                    &mut rng,
                )?);
            }
        }
        counts.extend(rollouts.iter().map(|r| {
            (
                r.trajectory.task.split.as_str(),
                episode_counts(&r.trajectory),
            )
        }));
        let scores = rollouts
            .iter()
            .map(|r| score_trajectory(&r.trajectory, &cfg.reward))
            .collect::<Result<Vec<_>>>()?;
        if let Some(w) = log.as_mut() {
            for (r, s) in rollouts.iter().zip(&scores) {
                w.write(&r.trajectory, s)?;
            }
        }
        let groups: Vec<GroupScores> = rollouts
            .chunks(cfg.rollouts_per_env)
            .zip(scores.chunks(cfg.rollouts_per_env))
            .map(|(rs, ss)| GroupScores {
                outcomes: ss.iter().map(|s| s.outcome).collect(),
                steps: rs
                    .iter()
                    .zip(ss)
                    .map(|(r, s)| {
                        r.trajectory
                            .steps
                            .iter()
                            .zip(&s.steps)
                            .map(|(st, sr)| (st.parsed.tag, sr.mr))
                            .collect()
                    })
                    .collect(),
            })
            .collect();
        let adv = compute_advantages(&groups, cfg.loss.alpha)?;

        let mut last = None;
        for update in 0..cfg.updates_per_epoch {
            match update_step(cfg, &mut params, reference, &rollouts, &adv) {
                Ok(v) => last = Some(v),
                Err(Error::Numerical(msg)) => {
                    let dump = dump_batch(
                        cfg,
                        out.map(|o| o.dir.as_path()),
                        epoch,
                        update,
                        &rollouts,
                        &adv,
                        &params,
                    );
                    let at = match dump {
                        Ok(p) => format!("; batch dumped to {}", p.display()),
                        Err(e) => format!("; dump failed: {e}"),
                    };
                    return Err(Error::Numerical(format!(
                        "epoch {epoch} update {update}: {msg}{at}"
                    )));
                }
                Err(e) => return Err(e),
            }
        }
        let (loss, kl, clip_fraction) = last.unwrap_or_default();
        let stats = epoch_stats(epoch, &rollouts, &scores, loss, kl, clip_fraction);
        if let Some(o) = out {
            csv.push_str(&stats.csv_row());
            csv.push('\n');
            let every = cfg.checkpoint_every;
            if every > 0 && (epoch + 1) % every == 0 {
                let ck_dir = o.dir.join("checkpoints");
                fs::create_dir_all(&ck_dir).map_err(|e| Error::io(&ck_dir, e))?;
                params.save(&ck_dir.join(format!("epoch_{:04}.json", epoch + 1)))?;
            }
        }
        history.push(stats);
    }
    if let Some(o) = out {
        fs::write(o.metrics_path(), &csv).map_err(|e| Error::io(o.metrics_path(), e))?;
        params.save(&o.final_checkpoint())?;
    }
    if let Some(w) = log {
        w.finish()?;
    }
    Ok(RlOutcome {
        params,
        history,
        rollout_metrics: MetricsReport::from_labeled(counts),
    })
}

/// One gradient step on a collected batch; returns (loss, kl, clip fraction).
fn update_step(
    cfg: &TrainConfig,
    params: &mut PolicyParams,
    reference: &PolicyParams,
    rollouts: &[Rollout],
    adv: &AdvantageBatch,
) -> Result<(f64, f64, f64)> {
    let mut logps = Vec::with_capacity(adv.step.len());
    let mut ref_logps = Vec::with_capacity(adv.step.len());
    for r in rollouts {
        for d in &r.decisions {
            logps.push(d.log_probs(params)?);
            ref_logps.push(d.log_probs(reference)?);
        }
    }
    let mut steps = Vec::with_capacity(adv.step.len());
    let mut t = 0;
    for r in rollouts {
        for (s, &choice) in r.trajectory.steps.iter().zip(&r.choices) {
            steps.push(SurrogateStep {
                advantage: adv.step[t],
                choice,
                logprob_old: s.logprob_old,
                logp: &logps[t],
                ref_logp: &ref_logps[t],
            });
            t += 1;
        }
    }
    let value = surrogate_loss(&steps, &cfg.loss)?;
    let mut grad = vec![0.0; params.weights.len()];
    let scale = params.features.scale;
    let decisions = rollouts.iter().flat_map(|r| &r.decisions);
    for (d, dz) in decisions.zip(&value.d_logits) {
        d.backprop(dz, scale, &mut grad);
    }
    params.apply_gradient(&grad, cfg.rl_lr)?;
    Ok((value.loss, value.kl, value.clip_fraction))
}

fn epoch_stats(
    epoch: usize,
    rollouts: &[Rollout],
    scores: &[TrajectoryScore],
    loss: f64,
    kl: f64,
    clip_fraction: f64,
) -> EpochStats {
    let counts: Vec<_> = rollouts
        .iter()
        .map(|r| episode_counts(&r.trajectory))
        .collect();
    let m = SplitMetrics::from_counts(&counts);
    let mut tag_steps = [0u64; 4];
    let mut mr = 0.0;
    let mut fmt = 0;
    for (r, s) in rollouts.iter().zip(scores) {
        for (st, sr) in r.trajectory.steps.iter().zip(&s.steps) {
            tag_steps[st.parsed.tag.index()] += 1;
            mr += sr.mr;
            fmt += (sr.format != 0.0) as u64;
        }
    }
    let n = scores.len().max(1) as f64;
    EpochStats {
        epoch,
        split: Split::L0,
        episodes: m.episodes,
        mean_outcome: scores.iter().map(|s| s.outcome).sum::<f64>() / n,
        success_rate: m.success_rate,
        invalid_action_rate: m.invalid_action_rate,
        repetitive_action_rate: m.repetitive_action_rate,
        mean_actions: m.mean_actions_per_episode,
        mean_mr_reward: mr / m.steps.max(1) as f64,
        format_penalties: fmt,
        tag_steps,
        loss,
        kl,
        clip_fraction,
    }
}

#[derive(Serialize)]
struct BatchDump<'a> {
    epoch: usize,
    update: usize,
    alpha: f64,
    params_version: u64,
    max_abs_weight: f64,
    non_finite_weights: usize,
    trajectory_advantages: &'a [f64],
    step_advantages: &'a [f64],
    episodes: Vec<DumpEpisode>,
}

#[derive(Serialize)]
struct DumpEpisode {
    category: String,
    layout_seed: u64,
    success: bool,
    choices: Vec<usize>,
    tags: Vec<MetaTag>,
    logprob_old: Vec<f64>,
}

fn dump_batch(
    cfg: &TrainConfig,
    dir: Option<&Path>,
    epoch: usize,
    update: usize,
    rollouts: &[Rollout],
    adv: &AdvantageBatch,
    params: &PolicyParams,
) -> Result<PathBuf> {
    let dir = dir
        .map(Path::to_path_buf)
        .unwrap_or_else(std::env::temp_dir);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let path = dir.join(format!(
        "nonfinite_seed{}_epoch{epoch}_update{update}.json",
        cfg.master_seed
    ));
    let dump = BatchDump {
        epoch,
        update,
        alpha: adv.alpha,
        params_version: params.version,
        max_abs_weight: params
            .weights
            .iter()
            .fold(0.0, |m, w| if w.abs() > m { w.abs() } else { m }),
        non_finite_weights: params.weights.iter().filter(|w| !w.is_finite()).count(),
        trajectory_advantages: &adv.trajectory,
        step_advantages: &adv.step,
        episodes: rollouts
            .iter()
            .map(|r| DumpEpisode {
                category: r.trajectory.task.category.to_string(),
                layout_seed: r.trajectory.task.layout_seed,
                success: r.trajectory.success,
                choices: r.choices.clone(),
                tags: r.trajectory.steps.iter().map(|s| s.parsed.tag).collect(),
                logprob_old: r.trajectory.steps.iter().map(|s| s.logprob_old).collect(),
            })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&dump).map_err(|e| Error::Internal(e.to_string()))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Evaluation task lists for the requested splits.
pub fn eval_tasks(cfg: &TrainConfig, splits: &[Split]) -> Result<Vec<TaskSpec>> {
    let mut out = Vec::new();
    for &s in splits {
        out.extend(generate_split(s, cfg.eval_tasks, cfg.eval_seed)?);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub rollouts: Vec<Rollout>,
}

/// Greedy evaluation on fixed tasks, optionally logging every episode.
pub fn evaluate(
    cfg: &TrainConfig,
    params: &PolicyParams,
    tasks: &[TaskSpec],
    log: Option<&Path>,
) -> Result<Evaluation> {
    let mut writer = log.map(TrajectoryLogWriter::create).transpose()?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut rollouts = Vec::with_capacity(tasks.len());
    for task in tasks {
        let r = run_episode(task, params, Decoding::Greedy, cfg.max_steps, &mut rng)?;
        if let Some(w) = writer.as_mut() {
            w.write(
                &r.trajectory,
                &score_trajectory(&r.trajectory, &cfg.reward)?,
            )?;
        }
        rollouts.push(r);
    }
    if let Some(w) = writer {
        w.finish()?;
    }
    let report = MetricsReport::from_trajectories(rollouts.iter().map(|r| &r.trajectory));
    Ok(Evaluation { report, rollouts })
}
