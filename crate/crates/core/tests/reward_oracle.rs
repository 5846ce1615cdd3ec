mod common;

use common::*;
use metarl_core::env::{sample_training_tasks, Split, TaskCategory, TaskSpec};
use metarl_core::expert::{demonstrations, ExpertConfig};
use metarl_core::harness::{run_episode, Decoding};
use metarl_core::policy::{FeatureConfig, PolicyParams};
use metarl_core::reward::{extract_target, score_trajectory, RewardConfig};
use metarl_core::tags::MetaTag;
use metarl_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn library(
    traj: &metarl_core::trajectory::Trajectory,
    cfg: &RewardConfig,
) -> (f64, Vec<(f64, f64)>) {
    let s = score_trajectory(traj, cfg).unwrap();
    (
        s.outcome,
        s.steps.iter().map(|r| (r.mr, r.format)).collect(),
    )
}

#[test]
fn fixtures_agree_with_oracle() {
    let cfg = RewardConfig::default();
    let fixtures = reward_fixtures();
    assert!(fixtures.len() >= 10);
    for (name, traj) in &fixtures {
        assert_eq!(
            library(traj, &cfg),
            oracle_score(traj, &cfg),
            "fixture: {name}"
        );
    }
}

#[test]
fn keychain_transcript_earns_no_explore_reward() {
    let traj = keychain_transcript(E);
    let (_, steps) = library(&traj, &RewardConfig::default());
    assert_eq!(steps[0].0, 0.1);
    for s in &steps[2..] {
        assert_eq!(*s, (0.0, 0.0));
    }
}

#[test]
fn reflective_inventory_is_rewarded() {
    let traj = &reward_fixtures()[2].1;
    let (_, steps) = library(traj, &RewardConfig::default());
    assert_eq!(steps[3].0, 0.1);
}

#[test]
fn single_failure_is_not_enough() {
    let traj = &reward_fixtures()[3].1;
    let (_, steps) = library(traj, &RewardConfig::default());
    assert_eq!(steps[2].0, 0.0);
}

#[test]
fn planning_reward_follows_outcome() {
    let cfg = RewardConfig::default();
    let (_, won) = library(&reward_fixtures()[8].1, &cfg);
    assert_eq!(won[0].0, 0.1);
    assert_eq!(won[5].0, 0.1);
    let (_, lost) = library(&reward_fixtures()[9].1, &cfg);
    assert_eq!(lost[0].0, 0.0);
}

#[test]
fn format_penalty_iff_malformed() {
    let cfg = RewardConfig::default();
    for (_, traj) in reward_fixtures() {
        let s = score_trajectory(&traj, &cfg).unwrap();
        for (st, r) in traj.steps.iter().zip(&s.steps) {
            assert_eq!(r.format == -0.1, !st.parsed.format_ok);
            assert_eq!(r.total, r.mr + r.format);
        }
    }
}

#[test]
fn unfinished_trajectory_is_rejected() {
    let mut traj = reward_fixtures()[0].1.clone();
    traj.done = false;
    assert!(matches!(
        score_trajectory(&traj, &RewardConfig::default()),
        Err(Error::Usage(_))
    ));
}

#[test]
fn targets_agree_with_oracle() {
    for a in [
        "take keychain 1 from dresser 1",
        "inventory",
        "look",
        "go to handtowelholder 1",
        "put mug 2 in/on shelf 1",
        "use desklamp 1",
        "examine book 3",
        "wait",
        "go to",
        "take x from y",
    ] {
        assert_eq!(extract_target(a), oracle_target(a), "{a}");
    }
}

#[test]
fn expert_explore_steps_are_rewarded() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let tasks = sample_training_tasks(&mut rng, 100).unwrap();
    let demos = demonstrations(&tasks, &ExpertConfig::default(), 5).unwrap();
    let cfg = RewardConfig::default();
    let mut explores = 0;
    for d in &demos {
        let s = score_trajectory(d, &cfg).unwrap();
        for (st, r) in d.steps.iter().zip(&s.steps) {
            if st.parsed.tag == MetaTag::Explore {
                explores += 1;
                assert_eq!(r.mr, cfg.r_explore, "unrewarded explore `{}`", st.action());
            }
        }
    }
    assert!(explores > 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Random-policy rollouts: the verifier and the oracle agree everywhere.
    #[test]
    fn rollouts_agree_with_oracle(seed in 0u64..100_000, noise in 0.0f64..0.5, window in 1u32..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = PolicyParams::zeros(FeatureConfig::default()).unwrap();
        for w in &mut p.weights {
            *w = rng.gen_range(-2.0..2.0);
        }
        let cat = TaskCategory::TRAINING[rng.gen_range(0..4)];
        let task = TaskSpec::new(cat, rng.gen_range(0..4096), Split::L0).unwrap();
        let traj = run_episode(&task, &p, Decoding::Sample { p_noise: noise }, 30, &mut rng).unwrap().trajectory;
        let cfg = RewardConfig { failure_window: window, ..RewardConfig::default() };
        prop_assert_eq!(library(&traj, &cfg), oracle_score(&traj, &cfg));
    }
}
