//! Training and evaluation harness: configuration, rollouts, the
//! cold-start and RL loops, metrics and trajectory logs.

pub mod config;
pub mod log;
pub mod metrics;
pub mod rollout;
pub mod train;

pub use config::{Arm, TrainConfig};
pub use log::{
    analyze, analyze_episodes, read_log, Analysis, LoggedEpisode, TagSummary, TrajectoryLogWriter,
    LOG_SCHEMA_VERSION,
};
pub use metrics::{count_steps, episode_counts, EpisodeCounts, MetricsReport, SplitMetrics};
pub use rollout::{run_episode, Decoding, Rollout};
pub use train::{
    cold_start, eval_tasks, evaluate, initial_policy, stream_seed, train_rl, ColdStart, EpochStats,
    Evaluation, RlOutcome, RunOutput,
};
