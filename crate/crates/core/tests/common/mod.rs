//! Independent reference implementations and fixture builders shared by the
//! integration tests. Nothing here calls the library code it is compared
//! against.

#![allow(dead_code)]

use metarl_core::env::{Split, TaskCategory, TaskSpec, NOTHING_HAPPENS};
use metarl_core::reward::RewardConfig;
use metarl_core::tags::{parse, MetaTag};
use metarl_core::trajectory::{StepRecord, Trajectory};

/// Population z-scores computed the long way; zeros for tiny spread.
pub fn oracle_zscores(xs: &[f64]) -> Vec<f64> {
    let n = xs.len() as f64;
    let mut sum = 0.0;
    for x in xs {
        sum += x;
    }
    let mean = sum / n;
    let mut ss = 0.0;
    for x in xs {
        ss += (x - mean) * (x - mean);
    }
    let sd = (ss / n).sqrt();
    if xs.len() < 2 || sd < 1e-8 {
        return vec![0.0; xs.len()];
    }
    xs.iter().map(|x| (x - mean) / sd).collect()
}

pub fn mean_and_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, v.sqrt())
}

/// Target entity by plain token inspection.
pub fn oracle_target(action: &str) -> Option<String> {
    let toks: Vec<&str> = action.split_whitespace().collect();
    let rest: &[&str] = if toks.len() >= 2 && toks[0] == "go" && toks[1] == "to" {
        &toks[2..]
    } else if !toks.is_empty()
        && [
            "take", "put", "open", "close", "use", "clean", "heat", "cool", "examine",
        ]
        .contains(&toks[0])
    {
        &toks[1..]
    } else {
        return None;
    };
    if rest.len() >= 2 && !rest[0].is_empty() && rest[1].chars().all(|c| c.is_ascii_digit()) {
        Some(format!("{} {}", rest[0], rest[1]))
    } else {
        None
    }
}

fn failed(s: &StepRecord) -> bool {
    s.observation == NOTHING_HAPPENS || !s.parsed.format_ok
}

fn prev_obs(traj: &Trajectory, j: usize) -> &str {
    if j == 0 {
        &traj.initial_observation
    } else {
        &traj.steps[j - 1].observation
    }
}

fn corrective(traj: &Trajectory, j: usize, failed_action: &str) -> bool {
    let s = &traj.steps[j];
    if s.observation == NOTHING_HAPPENS || s.parsed.action == failed_action {
        return false;
    }
    let info = s.parsed.action == "look"
        || s.parsed.action == "inventory"
        || s.parsed.action.starts_with("examine ");
    s.state_fingerprint != s.next_fingerprint || (info && s.observation != prev_obs(traj, j))
}

/// Rewards by literal reading of the rules: `(outcome, [(mr, format)])`.
pub fn oracle_score(traj: &Trajectory, cfg: &RewardConfig) -> (f64, Vec<(f64, f64)>) {
    let mut visited: Vec<String> = Vec::new();
    let mut out = Vec::new();
    for t in 0..traj.steps.len() {
        let s = &traj.steps[t];
        let fmt = if s.parsed.format_ok {
            0.0
        } else {
            -cfg.lambda_format
        };
        let mut mr = 0.0;
        if s.parsed.format_ok {
            match s.parsed.tag {
                MetaTag::Planning => {
                    if traj.success {
                        mr = cfg.r_planning;
                    }
                }
                MetaTag::Explore => {
                    if let Some(e) = oracle_target(&s.parsed.action) {
                        if !visited.contains(&e) {
                            mr = cfg.r_explore;
                        }
                    }
                }
                MetaTag::Reflection => {
                    let w = cfg.failure_window as usize;
                    let window_failed = t >= w && (t - w..t).all(|j| failed(&traj.steps[j]));
                    if window_failed {
                        let bad = &traj.steps[t - 1].parsed.action;
                        let fix = corrective(traj, t, bad)
                            || (t + 1 < traj.steps.len() && corrective(traj, t + 1, bad));
                        if fix {
                            mr = cfg.r_reflection;
                        }
                    }
                }
                MetaTag::Monitor => {}
            }
        }
        out.push((mr, fmt));
        if let Some(e) = oracle_target(&s.parsed.action) {
            if !visited.contains(&e) {
                visited.push(e);
            }
        }
    }
    (if traj.success { cfg.r_success } else { 0.0 }, out)
}

/// `(invalid, repetitive)` counts by quadratic scan.
pub fn oracle_counts(steps: &[StepRecord]) -> (u64, u64) {
    let mut invalid = 0;
    let mut rep = 0;
    for t in 0..steps.len() {
        if steps[t].observation == NOTHING_HAPPENS {
            invalid += 1;
        }
        if (0..t).any(|j| {
            steps[j].state_fingerprint == steps[t].state_fingerprint
                && steps[j].parsed.action == steps[t].parsed.action
        }) {
            rep += 1;
        }
    }
    (invalid, rep)
}

/// One fixture step: the state it starts in, the text emitted, the
/// observation, and the state it leads to.
pub struct Fx<'a> {
    pub from: u64,
    pub tag: Option<MetaTag>,
    pub action: &'a str,
    pub obs: &'a str,
    pub to: u64,
}

pub fn fx<'a>(from: u64, tag: Option<MetaTag>, action: &'a str, obs: &'a str, to: u64) -> Fx<'a> {
    Fx {
        from,
        tag,
        action,
        obs,
        to,
    }
}

/// Builds a finished trajectory. `tag: None` renders a malformed turn with
/// no meta-reasoning tag.
pub fn fixture(steps: &[Fx<'_>], success: bool) -> Trajectory {
    let task = TaskSpec::new(TaskCategory::PickPlace, 3, Split::L0).unwrap();
    let records = steps
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let text = match f.tag {
                Some(t) => format!("<{t}>thinking</{t}>\n<action>{}</action>", f.action),
                None => format!("thinking\n<action>{}</action>", f.action),
            };
            StepRecord {
                step_index: i as u32,
                state_fingerprint: f.from,
                parsed: parse(&text),
                output_text: text,
                observation: f.obs.to_string(),
                next_fingerprint: f.to,
                logprob_old: 0.0,
            }
        })
        .collect();
    Trajectory {
        task,
        initial_observation: "You are in the middle of a room.".into(),
        initial_fingerprint: steps.first().map_or(0, |f| f.from),
        steps: records,
        done: true,
        success,
    }
}

pub const NH: &str = NOTHING_HAPPENS;
pub const P: Option<MetaTag> = Some(MetaTag::Planning);
pub const E: Option<MetaTag> = Some(MetaTag::Explore);
pub const R: Option<MetaTag> = Some(MetaTag::Reflection);
pub const M: Option<MetaTag> = Some(MetaTag::Monitor);

/// The vanilla-agent transcript segment: arrival at dresser 1, a take, then
/// three "go to dresser 1" while already there and a non-command.
pub fn keychain_transcript(tag: Option<MetaTag>) -> Trajectory {
    fixture(
        &[
            fx(1, E, "go to dresser 1", "You arrive at dresser 1. On the dresser 1, you see a keychain 2, and a keychain 1.", 2),
            fx(2, M, "take keychain 1 from dresser 1", "You pick up the keychain 1 from the dresser 1.", 3),
            fx(3, tag, "go to dresser 1", NH, 3),
            fx(3, tag, "go to dresser 1", NH, 3),
            fx(3, tag, "go to dresser 1", NH, 3),
            fx(3, tag, "move keychain 1 to safe 1", NH, 3),
        ],
        false,
    )
}

/// Hand-built fixtures covering each reward rule.
pub fn reward_fixtures() -> Vec<(&'static str, Trajectory)> {
    vec![
        ("keychain transcript, explore tags", keychain_transcript(E)),
        ("keychain transcript, monitor tags", keychain_transcript(M)),
        (
            "two failures then reflective inventory",
            fixture(
                &[
                    fx(
                        1,
                        P,
                        "go to toilet 1",
                        "You arrive at toilet 1. On the toilet 1, you see a candle 1.",
                        2,
                    ),
                    fx(2, M, "examine soapbar 2", NH, 2),
                    fx(2, M, "examine soapbar 2", NH, 2),
                    fx(2, R, "inventory", "You are carrying: a soapbar 1.", 2),
                    fx(2, M, "go to countertop 1", "You arrive at countertop 1.", 4),
                ],
                false,
            ),
        ),
        (
            "single failure then reflection",
            fixture(
                &[
                    fx(1, M, "go to sofa 1", "You arrive at sofa 1.", 2),
                    fx(2, M, "go to sofa 1", NH, 2),
                    fx(2, R, "go to bed 1", "You arrive at bed 1.", 3),
                ],
                false,
            ),
        ),
        (
            "reflection whose correction comes one step later",
            fixture(
                &[
                    fx(1, M, "open safe 1", "You open the safe 1.", 2),
                    fx(2, M, "open safe 1", NH, 2),
                    fx(2, M, "open safe 1", NH, 2),
                    fx(2, R, "open safe 1", NH, 2),
                    fx(2, M, "close safe 1", "You close the safe 1.", 1),
                ],
                false,
            ),
        ),
        (
            "reflection repeating the failed action",
            fixture(
                &[
                    fx(1, M, "go to shelf 1", "You arrive at shelf 1.", 2),
                    fx(2, M, "go to shelf 1", NH, 2),
                    fx(2, M, "go to shelf 1", NH, 2),
                    fx(2, R, "go to shelf 1", NH, 2),
                    fx(2, M, "go to shelf 1", NH, 2),
                ],
                false,
            ),
        ),
        (
            "malformed failures count toward the window",
            fixture(
                &[
                    fx(1, None, "go to desk 1", "You arrive at desk 1.", 2),
                    fx(2, None, "look", "You are facing the desk 1.", 2),
                    fx(
                        2,
                        R,
                        "take pen 1 from desk 1",
                        "You pick up the pen 1 from the desk 1.",
                        3,
                    ),
                ],
                false,
            ),
        ),
        (
            "info action whose text does not change",
            fixture(
                &[
                    fx(1, M, "inventory", "You are not carrying anything.", 1),
                    fx(1, M, "take mug 1 from shelf 1", NH, 1),
                    fx(1, M, "take mug 1 from shelf 1", NH, 1),
                    fx(1, R, "look", NH, 1),
                    fx(1, M, "inventory", "You are not carrying anything.", 1),
                ],
                false,
            ),
        ),
        (
            "successful episode with planning and explores",
            fixture(
                &[
                    fx(
                        1,
                        P,
                        "go to cabinet 1",
                        "You arrive at cabinet 1. The cabinet 1 is closed.",
                        2,
                    ),
                    fx(
                        2,
                        M,
                        "open cabinet 1",
                        "You open the cabinet 1. In it, you see a mug 1.",
                        3,
                    ),
                    fx(
                        3,
                        M,
                        "take mug 1 from cabinet 1",
                        "You pick up the mug 1 from the cabinet 1.",
                        4,
                    ),
                    fx(4, E, "go to shelf 1", "You arrive at shelf 1.", 5),
                    fx(5, E, "go to cabinet 1", "You arrive at cabinet 1.", 6),
                    fx(6, P, "go to shelf 1", "You arrive at shelf 1.", 5),
                    fx(
                        5,
                        M,
                        "put mug 1 in/on shelf 1",
                        "You put the mug 1 in/on the shelf 1.",
                        7,
                    ),
                ],
                true,
            ),
        ),
        (
            "failed episode with planning",
            fixture(
                &[
                    fx(1, P, "go to cabinet 1", "You arrive at cabinet 1.", 2),
                    fx(2, E, "go to drawer 2", "You arrive at drawer 2.", 3),
                    fx(3, E, "examine drawer 2", "The drawer 2 is closed.", 3),
                    fx(3, E, "look", "You are facing the drawer 2.", 3),
                ],
                false,
            ),
        ),
        (
            "malformed steps earn the format penalty only",
            fixture(
                &[
                    fx(1, None, "go to sofa 1", "You arrive at sofa 1.", 2),
                    fx(2, E, "go to bed 1", "You arrive at bed 1.", 3),
                    fx(3, None, "go to armchair 1", "You arrive at armchair 1.", 4),
                ],
                true,
            ),
        ),
        (
            "reflection at the first step",
            fixture(
                &[fx(1, R, "look", "You are in the middle of a room.", 1)],
                false,
            ),
        ),
    ]
}
