//! Scripted demonstrator.
//!
//! Solves any generated task by searching receptacles in listing order,
//! remembering what it has seen, then taking, treating and placing the goal
//! objects. Steps are annotated with meta-reasoning tags:
//!
//! * the first step is `<planning>` with an enumerated plan;
//! * moving to a not-yet-searched receptacle is `<explore>`;
//! * the first real step after an injected failure is `<reflection>`;
//! * everything else is `<monitor>`.
//!
//! With probability `p_fail` per step the demonstrator re-issues its previous
//! action (which then fails with "Nothing happens."), once or twice in a row,
//! so that demonstrations contain recovery behaviour.

use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{
    self, entity_class, Goal, MiniWorld, Observation, TaskCategory, TaskSpec, Treatment,
    WorldState, DESKLAMP, MAX_STEPS,
};
use crate::error::{Error, Result};
use crate::tags::{self, MetaTag};
use crate::trajectory::{StepRecord, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpertConfig {
    /// Per-step probability of injecting a failure burst.
    pub p_fail: f64,
    /// Upper bound on injected failing steps per episode.
    pub max_injected: u32,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            p_fail: 0.1,
            max_injected: 6,
        }
    }
}

/// The demonstrator's memory and subgoal logic.
#[derive(Debug, Default)]
struct Planner {
    /// Last known receptacle of each object seen.
    seen: HashMap<String, String>,
    searched: HashSet<String>,
    lamp: Option<(String, String)>,
}

struct PlannedAction {
    action: String,
    search: bool,
}

impl Planner {
    fn observe(&mut self, obs: &Observation) {
        let v = &obs.view;
        if let Some(h) = &v.held {
            self.seen.remove(h);
        }
        let Some(here) = &v.location else { return };
        let closed = obs
            .admissible_actions
            .iter()
            .any(|a| a == &format!("open {here}"));
        if closed {
            return;
        }
        self.searched.insert(here.clone());
        self.seen.retain(|_, r| r != here);
        for item in &v.visible {
            self.seen.insert(item.clone(), here.clone());
            if entity_class(item) == DESKLAMP {
                self.lamp = Some((item.clone(), here.clone()));
            }
        }
    }

    fn next(&self, obs: &Observation) -> Option<PlannedAction> {
        let v = &obs.view;
        let goal = &v.goal;
        let here = v.location.as_deref();
        let admissible = |a: &str| obs.admissible_actions.iter().any(|x| x == a);
        let step = |action: String| PlannedAction {
            action,
            search: false,
        };
        let first_of = |kind: &str| {
            v.receptacles
                .iter()
                .find(|r| entity_class(r) == kind)
                .cloned()
        };
        let goto_or = |target: &str, then: String| {
            if here == Some(target) {
                step(then)
            } else {
                step(format!("go to {target}"))
            }
        };

        if let Some(h) = &v.held {
            if entity_class(h) != goal.object_class {
                let here = here?;
                return Some(step(format!("put {h} in/on {here}")));
            }
            if goal.treatment == Treatment::Lamp {
                return match &self.lamp {
                    Some((lamp, at)) => Some(goto_or(at, format!("use {lamp}"))),
                    None => self.search(obs),
                };
            }
            if let (Some(verb), Some(kind), false) = (
                goal.treatment.verb(),
                goal.treatment.appliance(),
                v.held_treated,
            ) {
                let app = first_of(kind)?;
                return Some(goto_or(&app, format!("{verb} {h} with {app}")));
            }
            let target = first_of(goal.receptacle_kind.as_deref()?)?;
            if here == Some(target.as_str()) && admissible(&format!("open {target}")) {
                return Some(step(format!("open {target}")));
            }
            return Some(goto_or(&target, format!("put {h} in/on {target}")));
        }

        let goal_kind = goal.receptacle_kind.as_deref();
        let mut known: Vec<(&String, &String)> = self
            .seen
            .iter()
            .filter(|(item, r)| {
                entity_class(item) == goal.object_class && Some(entity_class(r)) != goal_kind
            })
            .collect();
        known.sort();
        if let Some((item, r)) = known.first() {
            return Some(goto_or(r, format!("take {item} from {r}")));
        }
        self.search(obs)
    }

    fn search(&self, obs: &Observation) -> Option<PlannedAction> {
        let v = &obs.view;
        if let Some(here) = &v.location {
            if obs
                .admissible_actions
                .iter()
                .any(|a| a == &format!("open {here}"))
                && !self.searched.contains(here)
            {
                return Some(PlannedAction {
                    action: format!("open {here}"),
                    search: false,
                });
            }
        }
        let goal_kind = v.goal.receptacle_kind.as_deref();
        v.receptacles
            .iter()
            .filter(|r| !self.searched.contains(*r))
            .filter(|r| ![env::SINK, env::MICROWAVE, env::FRIDGE].contains(&entity_class(r)))
            .find(|r| Some(entity_class(r)) != goal_kind)
            .map(|r| PlannedAction {
                action: format!("go to {r}"),
                search: true,
            })
    }
}

/// Length of the demonstrator's failure-free solution, or `None` if it does
/// not finish within the step cap.
pub(crate) fn clean_solution_length(
    world: &WorldState,
    goal: &Goal,
    category: TaskCategory,
) -> Option<usize> {
    let mut w = world.clone();
    let mut planner = Planner::default();
    let mut obs = env::make_observation(&w, category, goal, String::new());
    for n in 0..MAX_STEPS as usize {
        planner.observe(&obs);
        let planned = planner.next(&obs)?;
        let (_, cmd) = w
            .admissible()
            .into_iter()
            .find(|(s, _)| *s == planned.action)?;
        let text = w.apply(cmd);
        w.step_index += 1;
        if w.goal_satisfied(goal) {
            return Some(n + 1);
        }
        obs = env::make_observation(&w, category, goal, text);
    }
    None
}

/// Solves `task` and returns a tag-annotated, successful demonstration.
pub fn solve_and_annotate(task: &TaskSpec, cfg: &ExpertConfig, seed: u64) -> Result<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut env = MiniWorld::new();
    let initial = env.reset(task)?;
    let mut obs = initial.clone();
    let mut planner = Planner::default();
    let mut steps: Vec<StepRecord> = Vec::new();
    let mut injected = 0u32;
    let mut reflect_next = false;
    let mut success = false;

    while !env.is_done() {
        planner.observe(&obs);
        let t = steps.len();
        let last = steps.last().map(|s| s.action().to_string());
        let can_fail = last
            .as_ref()
            .is_some_and(|a| !obs.admissible_actions.contains(a))
            && injected < cfg.max_injected;
        let (tag, action) = if can_fail && !reflect_next && rng.gen::<f64>() < cfg.p_fail {
            let burst = rng.gen_range(1..=2u32).min(cfg.max_injected - injected);
            for _ in 0..burst {
                let a = last.clone().unwrap_or_default();
                push_step(&mut env, &mut obs, &mut steps, MetaTag::Monitor, &a)?;
                injected += 1;
                if env.is_done() {
                    break;
                }
            }
            reflect_next = true;
            continue;
        } else {
            let planned = planner.next(&obs).ok_or_else(|| {
                Error::Internal(format!(
                    "expert has no plan for {} seed {}",
                    task.category, task.layout_seed
                ))
            })?;
            let tag = if t == 0 {
                MetaTag::Planning
            } else if reflect_next {
                MetaTag::Reflection
            } else if planned.search {
                MetaTag::Explore
            } else {
                MetaTag::Monitor
            };
            (tag, planned.action)
        };
        reflect_next = false;
        success = push_step(&mut env, &mut obs, &mut steps, tag, &action)?;
    }
    if !success {
        return Err(Error::Internal(format!(
            "expert exhausted the step cap on {} seed {}",
            task.category, task.layout_seed
        )));
    }
    Ok(Trajectory {
        task: task.clone(),
        initial_observation: initial.text,
        initial_fingerprint: initial.state_fingerprint,
        steps,
        done: true,
        success,
    })
}

fn push_step(
    env: &mut MiniWorld,
    obs: &mut Observation,
    steps: &mut Vec<StepRecord>,
    tag: MetaTag,
    action: &str,
) -> Result<bool> {
    let output_text = tags::render(tag, &obs.view, action);
    let parsed = tags::parse(&output_text);
    let out = env.step(action)?;
    steps.push(StepRecord {
        step_index: steps.len() as u32,
        state_fingerprint: obs.state_fingerprint,
        output_text,
        parsed,
        observation: out.observation.text.clone(),
        next_fingerprint: out.observation.state_fingerprint,
        logprob_old: 0.0,
    });
    *obs = out.observation;
    Ok(out.success)
}

/// Demonstrations for a list of tasks; demo `i` uses injection seed
/// `seed + i`.
pub fn demonstrations(
    tasks: &[TaskSpec],
    cfg: &ExpertConfig,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    tasks
        .iter()
        .enumerate()
        .map(|(i, t)| solve_and_annotate(t, cfg, seed.wrapping_add(i as u64)))
        .collect()
}
