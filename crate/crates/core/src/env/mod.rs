//! Deterministic household text-world.
//!
//! A room holds 6–10 receptacles (some closable) and 8–15 objects. Tasks ask
//! the agent to move, treat or inspect objects; the goal predicate is checked
//! after every step and the episode ends on success or after
//! [`MAX_STEPS`] steps.

mod task;
mod world;

pub use task::{
    build_world, generate_split, read_task_file, sample_training_tasks, write_task_file, Split,
    TaskCategory, TaskSpec, HELD_OUT_SEED_BASE, TRAIN_SEED_POOL,
};
pub use world::{
    Command, Goal, Item, Place, Receptacle, Treatment, WorldState, DESKLAMP, FRIDGE, MICROWAVE,
    SINK,
};

use crate::error::{Error, Result};

/// Step cap per episode.
pub const MAX_STEPS: u32 = 30;

/// The single observation returned for inadmissible or ineffective actions.
pub const NOTHING_HAPPENS: &str = "Nothing happens.";

/// The part of the world an agent can perceive, in structured form.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentView {
    pub category: TaskCategory,
    pub goal: Goal,
    pub task_text: String,
    /// Current receptacle name; `None` in the middle of the room.
    pub location: Option<String>,
    /// Names of every receptacle in the room.
    pub receptacles: Vec<String>,
    /// Objects visible at the current receptacle.
    pub visible: Vec<String>,
    pub held: Option<String>,
    /// Whether the held object already has the goal treatment.
    pub held_treated: bool,
    /// Goal objects already in place.
    pub placed: u8,
    pub step_index: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub text: String,
    pub admissible_actions: Vec<String>,
    pub state_fingerprint: u64,
    pub view: AgentView,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub done: bool,
    pub success: bool,
}

/// One environment instance. Instances share nothing, so separate workers
/// can each drive their own.
#[derive(Debug, Clone)]
pub struct MiniWorld {
    episode: Option<Episode>,
    max_steps: u32,
}

impl Default for MiniWorld {
    fn default() -> Self {
        Self {
            episode: None,
            max_steps: MAX_STEPS,
        }
    }
}

#[derive(Debug, Clone)]
struct Episode {
    task: TaskSpec,
    world: WorldState,
    done: bool,
    success: bool,
}

impl MiniWorld {
    pub fn new() -> Self {
        Self::default()
    }

    /// An environment whose episodes end after `max_steps` actions.
    pub fn with_max_steps(max_steps: u32) -> Self {
        Self {
            episode: None,
            max_steps: max_steps.max(1),
        }
    }

    /// Starts an episode. The same task always yields the same observation.
    pub fn reset(&mut self, task: &TaskSpec) -> Result<Observation> {
        let world = task.validate()?;
        let text = format!(
            "{}\n\nYour task is to: {}",
            world.describe_room(),
            task.description()
        );
        let episode = Episode {
            task: task.clone(),
            world,
            done: false,
            success: false,
        };
        let obs = episode.observe(text);
        self.episode = Some(episode);
        Ok(obs)
    }

    pub fn step(&mut self, action_text: &str) -> Result<StepOutcome> {
        let ep = self
            .episode
            .as_mut()
            .ok_or_else(|| Error::Usage("step called before reset".into()))?;
        if ep.done {
            return Err(Error::Usage(
                "step called after the episode finished".into(),
            ));
        }
        let action = action_text.trim();
        let cmd = ep
            .world
            .admissible()
            .into_iter()
            .find(|(s, _)| s == action)
            .map(|(_, c)| c);
        let text = match cmd {
            Some(c) => ep.world.apply(c),
            None => NOTHING_HAPPENS.to_string(),
        };
        ep.world.step_index += 1;
        if ep.world.goal_satisfied(&ep.task.goal) {
            ep.done = true;
            ep.success = true;
        } else if ep.world.step_index >= self.max_steps {
            ep.done = true;
        }
        Ok(StepOutcome {
            observation: ep.observe(text),
            done: ep.done,
            success: ep.success,
        })
    }

    pub fn task(&self) -> Option<&TaskSpec> {
        self.episode.as_ref().map(|e| &e.task)
    }

    pub fn state(&self) -> Option<&WorldState> {
        self.episode.as_ref().map(|e| &e.world)
    }

    pub fn is_done(&self) -> bool {
        self.episode.as_ref().is_some_and(|e| e.done)
    }
}

impl Episode {
    fn observe(&self, text: String) -> Observation {
        make_observation(&self.world, self.task.category, &self.task.goal, text)
    }
}

pub(crate) fn make_observation(
    w: &WorldState,
    category: TaskCategory,
    goal: &Goal,
    text: String,
) -> Observation {
    let held = w.held();
    Observation {
        text,
        admissible_actions: w.admissible().into_iter().map(|(s, _)| s).collect(),
        state_fingerprint: w.fingerprint(),
        view: AgentView {
            category,
            goal: goal.clone(),
            task_text: goal.describe(),
            location: w.agent_at.map(|r| w.receptacles[r].name.clone()),
            receptacles: w.receptacles.iter().map(|r| r.name.clone()).collect(),
            visible: w
                .visible_items()
                .into_iter()
                .map(|i| w.items[i].name.clone())
                .collect(),
            held: held.map(|h| w.items[h].name.clone()),
            held_treated: held.is_some_and(|h| w.items[h].has(goal.treatment)),
            placed: w.goal_progress(goal),
            step_index: w.step_index,
        },
    }
}

/// Splits "keychain 2" into ("keychain", "2"); the noun is the entity class.
pub fn entity_class(name: &str) -> &str {
    name.rsplit_once(' ').map_or(name, |(noun, _)| noun)
}
