//! JSON Lines trajectory logs and offline analysis.
//!
//! Every line is one record carrying `schema_version`. Step records of an
//! episode come first, followed by its episode record.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::metrics::{episode_counts, MetricsReport};
use crate::env::{Split, TaskCategory, TaskSpec};
use crate::error::{Error, Result};
use crate::reward::{score_trajectory, RewardConfig, TrajectoryScore};
use crate::tags::{MetaTag, ParsedStep};
use crate::trajectory::{StepRecord, Trajectory};

pub const LOG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Step(StepLine),
    Episode(EpisodeLine),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLine {
    pub schema_version: u32,
    pub episode_id: u64,
    pub step_index: u32,
    /// Observation the action was chosen from.
    pub observation_text: String,
    pub output_text: String,
    pub tag: MetaTag,
    pub reasoning: String,
    pub action: String,
    pub format_ok: bool,
    /// Observation returned by the action.
    pub result_text: String,
    pub mr_reward: f64,
    pub format_reward: f64,
    pub state_fingerprint: u64,
    pub next_state_fingerprint: u64,
    pub logprob_old: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLine {
    pub schema_version: u32,
    pub episode_id: u64,
    pub split: Split,
    pub category: TaskCategory,
    pub layout_seed: u64,
    pub initial_observation: String,
    pub initial_state_fingerprint: u64,
    pub n_steps: u32,
    pub done: bool,
    pub success: bool,
    pub outcome_reward: f64,
}

/// Appends episodes to a log file.
pub struct TrajectoryLogWriter {
    path: PathBuf,
    out: BufWriter<File>,
    next_id: u64,
}

impl TrajectoryLogWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
            next_id: 0,
        })
    }

    pub fn write(&mut self, traj: &Trajectory, score: &TrajectoryScore) -> Result<()> {
        let id = self.next_id;
        self.next_id += 1;
        for (t, (s, r)) in traj.steps.iter().zip(&score.steps).enumerate() {
            let line = LogRecord::Step(StepLine {
                schema_version: LOG_SCHEMA_VERSION,
                episode_id: id,
                step_index: s.step_index,
                observation_text: traj.observation_before(t).to_string(),
                output_text: s.output_text.clone(),
                tag: s.parsed.tag,
                reasoning: s.parsed.reasoning.clone(),
                action: s.parsed.action.clone(),
                format_ok: s.parsed.format_ok,
                result_text: s.observation.clone(),
                mr_reward: r.mr,
                format_reward: r.format,
                state_fingerprint: s.state_fingerprint,
                next_state_fingerprint: s.next_fingerprint,
                logprob_old: s.logprob_old,
            });
            self.put(&line)?;
        }
        let ep = LogRecord::Episode(EpisodeLine {
            schema_version: LOG_SCHEMA_VERSION,
            episode_id: id,
            split: traj.task.split,
            category: traj.task.category,
            layout_seed: traj.task.layout_seed,
            initial_observation: traj.initial_observation.clone(),
            initial_state_fingerprint: traj.initial_fingerprint,
            n_steps: traj.steps.len() as u32,
            done: traj.done,
            success: traj.success,
            outcome_reward: score.outcome,
        });
        self.put(&ep)
    }

    fn put(&mut self, rec: &LogRecord) -> Result<()> {
        let line = serde_json::to_string(rec).map_err(|e| Error::Internal(e.to_string()))?;
        writeln!(self.out, "{line}").map_err(|e| Error::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// An episode reconstructed from a log, with the rewards it was logged with.
#[derive(Debug, Clone, PartialEq)]
pub struct LoggedEpisode {
    pub trajectory: Trajectory,
    pub logged_outcome: f64,
    /// `(mr, format)` per step.
    pub logged_steps: Vec<(f64, f64)>,
}

/// Reads a log back into episodes.
pub fn read_log(path: &Path) -> Result<Vec<LoggedEpisode>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut pending: BTreeMap<u64, Vec<StepLine>> = BTreeMap::new();
    let mut episodes = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| parse_err(lineno, e.to_string()))?;
        let version = value
            .get("schema_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| parse_err(lineno, "missing schema_version".into()))?;
        if version != LOG_SCHEMA_VERSION as u64 {
            return Err(Error::SchemaVersion {
                path: path.to_path_buf(),
                expected: LOG_SCHEMA_VERSION,
                found: version.min(u32::MAX as u64) as u32,
            });
        }
        let rec: LogRecord =
            serde_json::from_value(value).map_err(|e| parse_err(lineno, e.to_string()))?;
        match rec {
            LogRecord::Step(s) => pending.entry(s.episode_id).or_default().push(s),
            LogRecord::Episode(ep) => {
                let steps = pending.remove(&ep.episode_id).unwrap_or_default();
                if steps.len() != ep.n_steps as usize {
                    return Err(parse_err(
                        lineno,
                        format!(
                            "episode {} has {} step records, expected {}",
                            ep.episode_id,
                            steps.len(),
                            ep.n_steps
                        ),
                    ));
                }
                let task = TaskSpec::new(ep.category, ep.layout_seed, ep.split)
                    .map_err(|e| parse_err(lineno, e.to_string()))?;
                let logged_steps = steps
                    .iter()
                    .map(|s| (s.mr_reward, s.format_reward))
                    .collect();
                let steps = steps
                    .into_iter()
                    .map(|s| StepRecord {
                        step_index: s.step_index,
                        state_fingerprint: s.state_fingerprint,
                        output_text: s.output_text,
                        parsed: ParsedStep {
                            tag: s.tag,
                            reasoning: s.reasoning,
                            action: s.action,
                            format_ok: s.format_ok,
                        },
                        observation: s.result_text,
                        next_fingerprint: s.next_state_fingerprint,
                        logprob_old: s.logprob_old,
                    })
                    .collect();
                episodes.push(LoggedEpisode {
                    trajectory: Trajectory {
                        task,
                        initial_observation: ep.initial_observation,
                        initial_fingerprint: ep.initial_state_fingerprint,
                        steps,
                        done: ep.done,
                        success: ep.success,
                    },
                    logged_outcome: ep.outcome_reward,
                    logged_steps,
                });
            }
        }
    }
    if let Some((id, _)) = pending.into_iter().next() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: format!("episode {id} has step records but no episode record"),
        });
    }
    Ok(episodes)
}

/// Per-tag reward totals.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TagSummary {
    pub tag: Option<MetaTag>,
    pub steps: u64,
    /// Steps whose meta-reasoning reward was non-zero.
    pub rewarded: u64,
    pub mr_total: f64,
    pub format_total: f64,
    pub mean_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub metrics: MetricsReport,
    /// One row per tag, in tag order.
    pub tags: Vec<TagSummary>,
    pub episodes: u64,
    /// Steps whose recomputed rewards differ from the logged ones.
    pub reward_mismatches: u64,
}

impl Analysis {
    pub fn table(&self) -> String {
        let mut out = self.metrics.table();
        out.push_str(&format!(
            "\n{:<11} {:>7} {:>9} {:>10} {:>10} {:>11}\n",
            "tag", "steps", "rewarded", "mr_total", "fmt_total", "mean_reward"
        ));
        for t in &self.tags {
            let name = t.tag.map_or("-", |t| t.as_str());
            out.push_str(&format!(
                "{:<11} {:>7} {:>9} {:>10.3} {:>10.3} {:>11.4}\n",
                name, t.steps, t.rewarded, t.mr_total, t.format_total, t.mean_reward
            ));
        }
        out.push_str(&format!(
            "\nreward mismatches vs log: {}\n",
            self.reward_mismatches
        ));
        out
    }
}

/// Recomputes metrics and reward breakdowns from logged episodes alone.
pub fn analyze_episodes(episodes: &[LoggedEpisode], reward: &RewardConfig) -> Result<Analysis> {
    let mut tags: Vec<TagSummary> = MetaTag::ALL
        .iter()
        .map(|&t| TagSummary {
            tag: Some(t),
            ..TagSummary::default()
        })
        .collect();
    let mut mismatches = 0;
    for ep in episodes {
        let score = score_trajectory(&ep.trajectory, reward)?;
        for ((s, r), &(mr, fmt)) in ep
            .trajectory
            .steps
            .iter()
            .zip(&score.steps)
            .zip(&ep.logged_steps)
        {
            let row = &mut tags[s.parsed.tag.index()];
            row.steps += 1;
            row.rewarded += (r.mr != 0.0) as u64;
            row.mr_total += r.mr;
            row.format_total += r.format;
            if r.mr != mr || r.format != fmt {
                mismatches += 1;
            }
        }
    }
    for row in &mut tags {
        if row.steps > 0 {
            row.mean_reward = (row.mr_total + row.format_total) / row.steps as f64;
        }
    }
    let metrics = MetricsReport::from_labeled(episodes.iter().map(|e| {
        (
            e.trajectory.task.split.as_str(),
            episode_counts(&e.trajectory),
        )
    }));
    Ok(Analysis {
        metrics,
        tags,
        episodes: episodes.len() as u64,
        reward_mismatches: mismatches,
    })
}

pub fn analyze(path: &Path, reward: &RewardConfig) -> Result<Analysis> {
    analyze_episodes(&read_log(path)?, reward)
}
