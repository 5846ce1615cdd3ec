mod common;

use common::*;
use metarl_core::env::{Split, NOTHING_HAPPENS};
use metarl_core::harness::{
    analyze, cold_start, count_steps, eval_tasks, evaluate, read_log, train_rl, Arm, MetricsReport,
    RunOutput, SplitMetrics, TrainConfig, TrajectoryLogWriter,
};
use metarl_core::reward::{score_trajectory, RewardConfig};
use metarl_core::Error;

fn tiny() -> TrainConfig {
    TrainConfig {
        n_envs_per_step: 3,
        rollouts_per_env: 4,
        rl_epochs: 3,
        bc_demos: 20,
        bc_epochs: 2,
        eval_tasks: 6,
        ..TrainConfig::default()
    }
}

#[test]
fn arrival_then_three_retries() {
    let mut steps = vec![fx(1, M, "go to dresser 1", "You arrive at dresser 1.", 2)];
    for _ in 0..3 {
        steps.push(fx(2, M, "go to dresser 1", NOTHING_HAPPENS, 2));
    }
    let rest = [
        "look",
        "inventory",
        "examine dresser 1",
        "go to bed 1",
        "go to sofa 1",
        "go to desk 1",
    ];
    for (i, a) in rest.iter().enumerate() {
        steps.push(fx(10 + i as u64, M, a, "ok", 11 + i as u64));
    }
    let traj = fixture(&steps, false);
    assert_eq!(traj.steps.len(), 10);
    let c = count_steps(&traj.steps, false);
    // the arrival is issued from another state; of the three retries at
    // dresser 1 only the second and third repeat an earlier (state, action)
    assert_eq!((c.invalid, c.repetitive), oracle_counts(&traj.steps));
    assert_eq!(c.invalid, 3);
    assert_eq!(c.repetitive, 2);
    let m = SplitMetrics::from_counts(&[c]);
    assert_eq!(m.invalid_action_rate, 30.0);
    assert_eq!(m.repetitive_action_rate, 20.0);
}

#[test]
fn three_repeats_at_dresser_fixture() {
    // arrive, then three identical commands from the same state
    let mut steps = vec![fx(1, M, "go to dresser 1", "You arrive at dresser 1.", 2)];
    steps.push(fx(2, M, "look", "You are facing the dresser 1.", 2));
    for _ in 0..4 {
        steps.push(fx(2, M, "go to dresser 1", NOTHING_HAPPENS, 2));
    }
    for (i, a) in [
        "go to bed 1",
        "go to sofa 1",
        "go to desk 1",
        "go to shelf 1",
    ]
    .iter()
    .enumerate()
    {
        steps.push(fx(20 + i as u64, M, a, "ok", 21 + i as u64));
    }
    let traj = fixture(&steps, false);
    let c = count_steps(&traj.steps, false);
    assert_eq!(c.repetitive, 3);
    assert_eq!(SplitMetrics::from_counts(&[c]).repetitive_action_rate, 30.0);
}

#[test]
fn keychain_transcript_steps_nine_and_ten() {
    let traj = keychain_transcript(M);
    // transcript steps 8..11 are fixture indices 2..5
    let c = count_steps(&traj.steps, false);
    assert_eq!(c.invalid, 4);
    assert_eq!(c.repetitive, 2);
    for t in [3, 4] {
        let s = &traj.steps[t];
        assert_eq!(s.observation, NOTHING_HAPPENS);
        assert!(traj.steps[..t]
            .iter()
            .any(|p| p.state_fingerprint == s.state_fingerprint && p.action() == s.action()));
    }
}

#[test]
fn all_success_set() {
    let trajs: Vec<_> = (0..4)
        .map(|_| fixture(&[fx(1, M, "look", "x", 1)], true))
        .collect();
    assert_eq!(
        MetricsReport::from_trajectories(&trajs)
            .overall
            .success_rate,
        100.0
    );
}

#[test]
fn log_round_trip_and_analysis() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.jsonl");
    let cfg = RewardConfig::default();
    let fixtures = reward_fixtures();
    let mut w = TrajectoryLogWriter::create(&path).unwrap();
    for (_, t) in &fixtures {
        w.write(t, &score_trajectory(t, &cfg).unwrap()).unwrap();
    }
    w.finish().unwrap();
    let eps = read_log(&path).unwrap();
    assert_eq!(eps.len(), fixtures.len());
    for (e, (_, t)) in eps.iter().zip(&fixtures) {
        assert_eq!(&e.trajectory, t);
    }
    let a = analyze(&path, &cfg).unwrap();
    assert_eq!(a.tags.len(), 4);
    assert_eq!(a.reward_mismatches, 0);
    assert_eq!(
        a.metrics,
        MetricsReport::from_trajectories(fixtures.iter().map(|(_, t)| t))
    );
}

#[test]
fn schema_mismatch_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.jsonl");
    std::fs::write(&path, "{\"kind\":\"episode\",\"schema_version\":7}\n").unwrap();
    match read_log(&path) {
        Err(Error::SchemaVersion {
            expected: 1,
            found: 7,
            ..
        }) => {}
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn truncated_line_names_its_number() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.jsonl");
    let t = &reward_fixtures()[0].1;
    let mut w = TrajectoryLogWriter::create(&path).unwrap();
    w.write(t, &score_trajectory(t, &RewardConfig::default()).unwrap())
        .unwrap();
    w.finish().unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    let cut = &lines[2][..lines[2].len() / 2];
    lines[2] = cut;
    std::fs::write(&path, lines.join("\n")).unwrap();
    match read_log(&path) {
        Err(Error::Parse { line: 3, .. }) => {}
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn config_errors() {
    let bad = TrainConfig {
        bc_demos: 0,
        ..tiny()
    };
    assert!(matches!(cold_start(&bad), Err(Error::Config(_))));
    let bad = TrainConfig {
        rollouts_per_env: 1,
        ..tiny()
    };
    assert!(matches!(bad.validate(), Err(Error::Config(_))));
    assert!(matches!("sideways".parse::<Arm>(), Err(Error::Config(_))));
    assert!(matches!("L9".parse::<Split>(), Err(Error::Config(_))));
}

#[test]
fn config_file_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    std::fs::write(&path, "rl_epochs = 7\n[reward]\nr_explore = 0.2\n").unwrap();
    let c = TrainConfig::from_file(&path).unwrap();
    assert_eq!(c.rl_epochs, 7);
    assert_eq!(c.reward.r_explore, 0.2);
    std::fs::write(&path, "rl_epochs = 0\n").unwrap();
    assert!(matches!(
        TrainConfig::from_file(&path),
        Err(Error::Config(_))
    ));
}

#[test]
fn cold_start_is_reproducible() {
    let a = cold_start(&tiny()).unwrap();
    let b = cold_start(&tiny()).unwrap();
    assert_eq!(a.params, b.params);
    assert!(a.bc_losses.last() < a.bc_losses.first());
}

#[test]
fn demo_log_replays_as_successes() {
    let cfg = tiny();
    let cs = cold_start(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("demos.jsonl");
    cs.write_demo_log(&path, &cfg.reward).unwrap();
    let a = analyze(&path, &cfg.reward).unwrap();
    assert_eq!(a.episodes, cfg.bc_demos as u64);
    assert_eq!(a.metrics.overall.success_rate, 100.0);
    assert_eq!(a.reward_mismatches, 0);
}

#[test]
fn training_writes_artifacts_and_replays() {
    let cfg = tiny();
    let start = cold_start(&cfg).unwrap().params;
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = RunOutput {
            dir: dir.path().join(name),
            log_rollouts: true,
        };
        let r = train_rl(&cfg, &start, &start, Some(&out)).unwrap();
        (r, out)
    };
    let (a, out_a) = run("a");
    let (b, out_b) = run("b");
    assert_eq!(a.params, b.params);
    let csv_a = std::fs::read(out_a.metrics_path()).unwrap();
    assert_eq!(csv_a, std::fs::read(out_b.metrics_path()).unwrap());
    let csv_a = String::from_utf8(csv_a).unwrap();
    assert_eq!(csv_a.lines().count(), cfg.rl_epochs + 1);
    assert!(csv_a
        .lines()
        .skip(1)
        .all(|l| l.split(',').nth(1) == Some("L0")));
    let eps = read_log(&out_a.rollout_log()).unwrap();
    assert_eq!(
        eps.len(),
        cfg.rl_epochs * cfg.n_envs_per_step * cfg.rollouts_per_env
    );
    let audit = analyze(&out_a.rollout_log(), &cfg.reward).unwrap();
    assert_eq!(audit.reward_mismatches, 0);
    assert_eq!(audit.metrics, a.rollout_metrics);
    assert!(out_a.final_checkpoint().exists());
}

#[test]
fn evaluation_log_matches_live_report() {
    let cfg = tiny();
    let p = cold_start(&cfg).unwrap().params;
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("eval.jsonl");
    let tasks = eval_tasks(&cfg, &Split::ALL).unwrap();
    let live = evaluate(&cfg, &p, &tasks, Some(&log)).unwrap();
    assert_eq!(live.report.per_split.len(), 3);
    assert_eq!(analyze(&log, &cfg.reward).unwrap().metrics, live.report);
}

#[test]
fn mismatched_reference_is_rejected() {
    let cfg = tiny();
    let a = metarl_core::policy::PolicyParams::zeros(cfg.features.clone()).unwrap();
    let mut f = cfg.features.clone();
    f.dim = 64;
    let b = metarl_core::policy::PolicyParams::zeros(f).unwrap();
    assert!(matches!(train_rl(&cfg, &a, &b, None), Err(Error::Usage(_))));
}
