mod common;

use common::{mean_and_std, oracle_zscores};
use metarl_core::objective::{
    blend, compute_advantages, normalize, surrogate_loss, tag_advantages, trajectory_advantages,
    GroupScores, LossConfig, SurrogateStep,
};
use metarl_core::policy::log_softmax;
use metarl_core::tags::MetaTag;
use metarl_core::Error;
use proptest::prelude::*;

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn trajectory_examples() {
    assert_eq!(
        trajectory_advantages(&[1.0, 1.0, 0.0, 0.0]).unwrap(),
        vec![1.0, 1.0, -1.0, -1.0]
    );
    assert_eq!(trajectory_advantages(&[1.0; 4]).unwrap(), vec![0.0; 4]);
    let r = [1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0];
    // mean 0.25, population sd sqrt(0.1875)
    let sd = 0.1875f64.sqrt();
    let want: Vec<f64> = r.iter().map(|x| (x - 0.25) / sd).collect();
    assert!(close(&trajectory_advantages(&r).unwrap(), &want, 1e-12));
    assert!(matches!(
        trajectory_advantages(&[1.0]),
        Err(Error::Usage(_))
    ));
}

#[test]
fn tag_examples() {
    let e = MetaTag::Explore;
    let a = tag_advantages(&[(e, 0.1), (e, 0.1), (e, 0.0)]);
    let s2 = std::f64::consts::SQRT_2;
    assert!(close(&a, &[s2 / 2.0, s2 / 2.0, -s2], 1e-12));
    assert_eq!(
        tag_advantages(&[(MetaTag::Monitor, 0.0), (MetaTag::Monitor, 0.0)]),
        vec![0.0, 0.0]
    );
    assert_eq!(tag_advantages(&[(MetaTag::Reflection, 0.1)]), vec![0.0]);
}

#[test]
fn blend_examples() {
    assert!((blend(1.0, -1.414, 0.5).unwrap() - -0.207).abs() < 1e-12);
    assert!(matches!(blend(0.0, 0.0, 1.5), Err(Error::Config(_))));
    assert!(matches!(blend(0.0, 0.0, -0.1), Err(Error::Config(_))));
}

#[test]
fn surrogate_rejects_empty_and_misaligned() {
    let cfg = LossConfig::default();
    assert!(matches!(surrogate_loss(&[], &cfg), Err(Error::Usage(_))));
    let lp = [0.0f64.ln()];
    let bad = SurrogateStep {
        advantage: 1.0,
        choice: 3,
        logprob_old: 0.0,
        logp: &lp,
        ref_logp: &lp,
    };
    assert!(surrogate_loss(&[bad], &cfg).is_err());
}

fn tagged_steps() -> impl Strategy<Value = Vec<(MetaTag, f64)>> {
    prop::collection::vec(
        (
            prop::sample::select(MetaTag::ALL.to_vec()),
            prop::sample::select(vec![0.0, 0.1, -0.1, 0.2]),
        ),
        0..60,
    )
}

proptest! {
    #[test]
    fn normalize_matches_oracle(xs in prop::collection::vec(-5.0f64..5.0, 1..40)) {
        prop_assert!(close(&normalize(&xs), &oracle_zscores(&xs), 1e-9));
    }

    #[test]
    fn normalized_groups_are_standard(xs in prop::collection::vec(-5.0f64..5.0, 2..40)) {
        let z = normalize(&xs);
        let (_, sd) = mean_and_std(&xs);
        if sd > 1e-8 {
            let (m, s) = mean_and_std(&z);
            prop_assert!(m.abs() < 1e-9);
            prop_assert!((s - 1.0).abs() < 1e-9);
        } else {
            prop_assert!(z.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn shift_and_scale_invariance(xs in prop::collection::vec(0.0f64..1.0, 2..20), shift in -3.0f64..3.0, scale in 0.5f64..4.0) {
        let moved: Vec<f64> = xs.iter().map(|x| x * scale + shift).collect();
        let (_, sd) = mean_and_std(&xs);
        prop_assume!(sd > 1e-6);
        prop_assert!(close(&normalize(&xs), &normalize(&moved), 1e-8));
    }

    #[test]
    fn tag_groups_normalize_separately(steps in tagged_steps()) {
        let a = tag_advantages(&steps);
        for tag in MetaTag::ALL {
            let idx: Vec<usize> = (0..steps.len()).filter(|&i| steps[i].0 == tag).collect();
            let rewards: Vec<f64> = idx.iter().map(|&i| steps[i].1).collect();
            let want = oracle_zscores(&rewards);
            let got: Vec<f64> = idx.iter().map(|&i| a[i]).collect();
            prop_assert!(close(&got, &want, 1e-9));
        }
    }

    #[test]
    fn alpha_one_ignores_process_rewards(
        outcomes in prop::collection::vec(prop::sample::select(vec![0.0, 1.0]), 2..9),
        steps in tagged_steps(),
    ) {
        let k = outcomes.len();
        let per: Vec<Vec<(MetaTag, f64)>> = (0..k).map(|i| steps.iter().skip(i).step_by(k).copied().collect()).collect();
        let g = GroupScores { outcomes: outcomes.clone(), steps: per.clone() };
        let batch = compute_advantages(&[g], 1.0).unwrap();
        let traj = trajectory_advantages(&outcomes).unwrap();
        let mut t = 0;
        for (i, s) in per.iter().enumerate() {
            for _ in s {
                prop_assert_eq!(batch.step[t].to_bits(), traj[i].to_bits());
                t += 1;
            }
        }
    }

    #[test]
    fn blend_is_affine(a in -3.0f64..3.0, m in -3.0f64..3.0, alpha in 0.0f64..=1.0) {
        let v = blend(a, m, alpha).unwrap();
        prop_assert!((v - (alpha * a + (1.0 - alpha) * m)).abs() < 1e-12);
    }

    #[test]
    fn clipped_objective_is_bounded(
        adv in -3.0f64..3.0,
        logits in prop::collection::vec(-3.0f64..3.0, 2..8),
        old_shift in -2.0f64..2.0,
    ) {
        let lp = log_softmax(&logits).unwrap();
        let cfg = LossConfig { lambda_kl: 0.0, ..LossConfig::default() };
        let step = SurrogateStep { advantage: adv, choice: 0, logprob_old: lp[0] + old_shift, logp: &lp, ref_logp: &lp };
        let v = surrogate_loss(&[step], &cfg).unwrap();
        let ratio = (lp[0] - step.logprob_old).exp();
        // the pessimistic bound never exceeds the unclipped term
        prop_assert!(v.surrogate <= ratio * adv + 1e-12);
        let clipped = ratio.clamp(0.8, 1.2) * adv;
        prop_assert!(v.surrogate <= clipped + 1e-12);
        prop_assert!((v.surrogate - (ratio * adv).min(clipped)).abs() < 1e-12);
    }

    #[test]
    fn kl_is_non_negative(a in prop::collection::vec(-4.0f64..4.0, 2..10), shift in prop::collection::vec(-2.0f64..2.0, 10)) {
        let b: Vec<f64> = a.iter().zip(&shift).map(|(x, s)| x + s).collect();
        let lp = log_softmax(&a).unwrap();
        let lq = log_softmax(&b).unwrap();
        let step = SurrogateStep { advantage: 0.0, choice: 0, logprob_old: lp[0], logp: &lp, ref_logp: &lq };
        let v = surrogate_loss(&[step], &LossConfig::default()).unwrap();
        prop_assert!(v.kl >= -1e-15);
    }
}
