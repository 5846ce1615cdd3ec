use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use metarl_core::env::{generate_split, read_task_file, write_task_file, Split};
use metarl_core::harness::{self, Arm, RunOutput, TrainConfig};
use metarl_core::policy::PolicyParams;

#[derive(Parser)]
#[command(
    name = "metarl",
    version,
    about = "Meta-reasoning RL on a household text world"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file; missing keys keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Behaviour-clone the expert and write a checkpoint.
    Coldstart {
        #[arg(long, default_value = "coldstart.json")]
        out: PathBuf,
        /// Also write the demonstrations as a trajectory log.
        #[arg(long)]
        demo_log: Option<PathBuf>,
    },
    /// Reinforcement learning from a checkpoint (or from scratch).
    Train {
        /// Training recipe: full, vanilla-grpo, no-outcome, no-cold-start.
        #[arg(long, default_value = "full")]
        mode: Arm,
        /// Starting checkpoint; cold start runs in-process when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "run")]
        out_dir: PathBuf,
        /// Write every training rollout to `<out_dir>/rollouts.jsonl`.
        #[arg(long)]
        log_rollouts: bool,
    },
    /// Greedy evaluation of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated splits to generate tasks for.
        #[arg(long, default_value = "L0,L1,L2", value_delimiter = ',')]
        splits: Vec<Split>,
        /// Evaluate the tasks in this file instead of generated splits.
        #[arg(long)]
        tasks: Option<PathBuf>,
        /// Trajectory log to write.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Recompute metrics and reward breakdowns from a trajectory log.
    Analyze {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Write a task split to a JSON Lines file.
    GenTasks {
        #[arg(long)]
        split: Split,
        #[arg(long, default_value_t = 128)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(common: &Common) -> Result<TrainConfig> {
    let mut cfg = match &common.config {
        Some(p) => TrainConfig::from_file(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.master_seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_checkpoint(path: &Path, cfg: &TrainConfig) -> Result<PolicyParams> {
    let p = PolicyParams::load(path)
        .with_context(|| format!("loading checkpoint {}", path.display()))?;
    if p.features != cfg.features {
        bail!(
            "checkpoint {} was trained with different feature settings",
            path.display()
        );
    }
    Ok(p)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let cfg = load_config(&cli.common)?;
    match cli.command {
        Command::Coldstart { out, demo_log } => {
            let cs = harness::cold_start(&cfg)?;
            cs.params.save(&out)?;
            if let Some(p) = &demo_log {
                cs.write_demo_log(p, &cfg.reward)?;
            }
            let first = cs.bc_losses.first().copied().unwrap_or_default();
            let last = cs.bc_losses.last().copied().unwrap_or_default();
            println!(
                "cold start: {} demos, {} steps, nll {first:.4} -> {last:.4}, wrote {}",
                cfg.bc_demos,
                cs.demo_steps,
                out.display()
            );
        }
        Command::Train {
            mode,
            checkpoint,
            out_dir,
            log_rollouts,
        } => {
            let cfg = mode.configure(&cfg);
            let start = match &checkpoint {
                Some(p) => load_checkpoint(p, &cfg)?,
                None => harness::initial_policy(&cfg)?,
            };
            std::fs::create_dir_all(&out_dir)
                .with_context(|| format!("creating {}", out_dir.display()))?;
            std::fs::write(out_dir.join("config.toml"), cfg.to_toml())?;
            let out = RunOutput {
                dir: out_dir.clone(),
                log_rollouts,
            };
            let run = harness::train_rl(&cfg, &start, &start, Some(&out))?;
            for s in &run.history {
                println!(
                    "epoch {:>4}  success {:>6.2}%  invalid {:>6.2}%  repetitive {:>6.2}%  loss {:+.5}  kl {:.5}",
                    s.epoch, s.success_rate, s.invalid_action_rate, s.repetitive_action_rate, s.loss, s.kl
                );
            }
            println!("wrote {}", out.final_checkpoint().display());
        }
        Command::Eval {
            checkpoint,
            splits,
            tasks,
            log,
            json,
        } => {
            let params = load_checkpoint(&checkpoint, &cfg)?;
            let tasks = match tasks {
                Some(p) => read_task_file(&p)?,
                None => harness::eval_tasks(&cfg, &splits)?,
            };
            let eval = harness::evaluate(&cfg, &params, &tasks, log.as_deref())?;
            if json {
                println!("{}", serde_json::to_string_pretty(&eval.report)?);
            } else {
                print!("{}", eval.report.table());
            }
        }
        Command::Analyze { log, json } => {
            let a = harness::analyze(&log, &cfg.reward)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&a)?);
            } else {
                print!("{}", a.table());
            }
        }
        Command::GenTasks { split, count, out } => {
            let tasks = generate_split(split, count, cfg.master_seed)?;
            write_task_file(&out, &tasks)?;
            println!("wrote {} {} tasks to {}", tasks.len(), split, out.display());
        }
    }
    Ok(())
}
