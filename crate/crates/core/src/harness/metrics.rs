//! Episode statistics: success, invalid and repetitive action rates.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::trajectory::{StepRecord, Trajectory};

/// Counts for one episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EpisodeCounts {
    pub steps: u64,
    pub invalid: u64,
    pub repetitive: u64,
    pub success: bool,
}

/// Counts a step list. A step is repetitive when the same action was already
/// issued from the same state fingerprint earlier in the episode.
pub fn count_steps(steps: &[StepRecord], success: bool) -> EpisodeCounts {
    let mut seen: HashSet<(u64, &str)> = HashSet::new();
    let mut c = EpisodeCounts {
        success,
        ..EpisodeCounts::default()
    };
    for s in steps {
        c.steps += 1;
        if s.is_invalid() {
            c.invalid += 1;
        }
        if !seen.insert((s.state_fingerprint, s.action())) {
            c.repetitive += 1;
        }
    }
    c
}

pub fn episode_counts(traj: &Trajectory) -> EpisodeCounts {
    count_steps(&traj.steps, traj.success)
}

/// Aggregate over a set of episodes. Rates are percentages.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub episodes: u64,
    pub successes: u64,
    pub steps: u64,
    pub invalid: u64,
    pub repetitive: u64,
    pub success_rate: f64,
    pub invalid_action_rate: f64,
    pub repetitive_action_rate: f64,
    pub mean_actions_per_episode: f64,
}

impl SplitMetrics {
    pub fn from_counts<'a>(counts: impl IntoIterator<Item = &'a EpisodeCounts>) -> Self {
        let mut m = SplitMetrics::default();
        for c in counts {
            m.episodes += 1;
            m.successes += c.success as u64;
            m.steps += c.steps;
            m.invalid += c.invalid;
            m.repetitive += c.repetitive;
        }
        m.success_rate = percent(m.successes, m.episodes);
        m.invalid_action_rate = percent(m.invalid, m.steps);
        m.repetitive_action_rate = percent(m.repetitive, m.steps);
        m.mean_actions_per_episode = ratio(m.steps, m.episodes);
        m
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn percent(num: u64, den: u64) -> f64 {
    100.0 * ratio(num, den)
}

/// Metrics overall and per split label.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub overall: SplitMetrics,
    pub per_split: BTreeMap<String, SplitMetrics>,
}

impl MetricsReport {
    /// Builds a report from `(split label, counts)` pairs.
    pub fn from_labeled<'a>(items: impl IntoIterator<Item = (&'a str, EpisodeCounts)>) -> Self {
        let mut by_split: BTreeMap<String, Vec<EpisodeCounts>> = BTreeMap::new();
        let mut all = Vec::new();
        for (label, c) in items {
            by_split.entry(label.to_string()).or_default().push(c);
            all.push(c);
        }
        MetricsReport {
            overall: SplitMetrics::from_counts(&all),
            per_split: by_split
                .into_iter()
                .map(|(k, v)| (k, SplitMetrics::from_counts(&v)))
                .collect(),
        }
    }

    pub fn from_trajectories<'a>(trajs: impl IntoIterator<Item = &'a Trajectory>) -> Self {
        let items: Vec<(&str, EpisodeCounts)> = trajs
            .into_iter()
            .map(|t| (t.task.split.as_str(), episode_counts(t)))
            .collect();
        Self::from_labeled(items)
    }

    pub fn split(&self, label: &str) -> Option<&SplitMetrics> {
        self.per_split.get(label)
    }

    /// Plain-text table, one row per split then the overall row.
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<8} {:>8} {:>9} {:>9} {:>12} {:>12}\n",
            "split", "episodes", "success%", "invalid%", "repetitive%", "mean_actions"
        );
        let rows = self
            .per_split
            .iter()
            .map(|(k, v)| (k.as_str(), v))
            .chain(std::iter::once(("all", &self.overall)));
        for (k, m) in rows {
            out.push_str(&format!(
                "{:<8} {:>8} {:>9.2} {:>9.2} {:>12.2} {:>12.2}\n",
                k,
                m.episodes,
                m.success_rate,
                m.invalid_action_rate,
                m.repetitive_action_rate,
                m.mean_actions_per_episode
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::NOTHING_HAPPENS;
    use crate::tags::parse;

    fn step(fp: u64, action: &str, obs: &str) -> StepRecord {
        let text = format!("<monitor>m</monitor>\n<action>{action}</action>");
        StepRecord {
            step_index: 0,
            state_fingerprint: fp,
            parsed: parse(&text),
            output_text: text,
            observation: obs.into(),
            next_fingerprint: fp,
            logprob_old: 0.0,
        }
    }

    #[test]
    fn repeated_failing_action_counts_from_second_issue() {
        let steps = vec![
            step(1, "go to sofa 1", "You arrive at sofa 1."),
            step(2, "go to dresser 1", NOTHING_HAPPENS),
            step(2, "go to dresser 1", NOTHING_HAPPENS),
            step(2, "go to dresser 1", NOTHING_HAPPENS),
            step(2, "go to dresser 1", NOTHING_HAPPENS),
        ];
        let c = count_steps(&steps, false);
        assert_eq!((c.steps, c.invalid, c.repetitive), (5, 4, 3));
    }

    #[test]
    fn same_action_from_other_state_is_not_repetitive() {
        let steps = vec![step(1, "look", "x"), step(2, "look", "x")];
        assert_eq!(count_steps(&steps, true).repetitive, 0);
    }

    #[test]
    fn empty_report_is_zero() {
        let m = SplitMetrics::from_counts(&[]);
        assert_eq!(m.success_rate, 0.0);
        assert_eq!(m.mean_actions_per_episode, 0.0);
    }
}
