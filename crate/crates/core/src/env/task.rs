//! Task categories, evaluation splits and task-set files.

use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::world::{sample_layout, Goal, Treatment, WorldState};
use crate::error::{Error, Result};
use crate::expert;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskCategory {
    PickPlace,
    PickTwoPlace,
    Clean,
    Heat,
    Cool,
    Examine,
}

impl TaskCategory {
    pub const ALL: [TaskCategory; 6] = [
        TaskCategory::PickPlace,
        TaskCategory::PickTwoPlace,
        TaskCategory::Clean,
        TaskCategory::Heat,
        TaskCategory::Cool,
        TaskCategory::Examine,
    ];

    /// Categories used for demonstrations, RL training, L0 and L1.
    pub const TRAINING: [TaskCategory; 4] = [
        TaskCategory::PickPlace,
        TaskCategory::Clean,
        TaskCategory::Heat,
        TaskCategory::Examine,
    ];

    /// Categories reserved for the L2 split.
    pub const HELD_OUT: [TaskCategory; 2] = [TaskCategory::PickTwoPlace, TaskCategory::Cool];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskCategory::PickPlace => "PickPlace",
            TaskCategory::PickTwoPlace => "PickTwoPlace",
            TaskCategory::Clean => "Clean",
            TaskCategory::Heat => "Heat",
            TaskCategory::Cool => "Cool",
            TaskCategory::Examine => "Examine",
        }
    }

    pub fn index(self) -> usize {
        TaskCategory::ALL
            .iter()
            .position(|c| *c == self)
            .unwrap_or(0)
    }

    pub fn treatment(self) -> Treatment {
        match self {
            TaskCategory::PickPlace | TaskCategory::PickTwoPlace => Treatment::None,
            TaskCategory::Clean => Treatment::Clean,
            TaskCategory::Heat => Treatment::Heat,
            TaskCategory::Cool => Treatment::Cool,
            TaskCategory::Examine => Treatment::Lamp,
        }
    }

    pub fn goal_count(self) -> u8 {
        if self == TaskCategory::PickTwoPlace {
            2
        } else {
            1
        }
    }
}

impl fmt::Display for TaskCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskCategory::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown task category `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Split {
    L0,
    L1,
    L2,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::L0, Split::L1, Split::L2];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::L0 => "L0",
            Split::L1 => "L1",
            Split::L2 => "L2",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown split `{s}`")))
    }
}

/// Layout seeds below this bound form the training pool (seen variants).
pub const TRAIN_SEED_POOL: u64 = 4096;
/// Held-out layout seeds start here.
pub const HELD_OUT_SEED_BASE: u64 = 1 << 32;
const HELD_OUT_SEED_RANGE: u64 = 1 << 24;

/// Step budget the clean expert solution must fit in, leaving headroom for
/// injected failures in demonstrations.
pub(crate) const EXPERT_BUDGET: usize = 22;
const MAX_LAYOUT_ATTEMPTS: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskSpec {
    pub category: TaskCategory,
    pub goal: Goal,
    pub layout_seed: u64,
    pub split: Split,
}

impl TaskSpec {
    /// Builds the task for a category and layout seed, deriving the goal.
    pub fn new(category: TaskCategory, layout_seed: u64, split: Split) -> Result<Self> {
        let (_, goal) = build_world(category, layout_seed)?;
        Ok(TaskSpec {
            category,
            goal,
            layout_seed,
            split,
        })
    }

    pub fn description(&self) -> String {
        self.goal.describe()
    }

    /// Checks that the stored goal is the one the layout seed generates and
    /// that the split constraints hold.
    pub fn validate(&self) -> Result<WorldState> {
        let (world, goal) = build_world(self.category, self.layout_seed)?;
        if goal != self.goal {
            return Err(Error::Config(format!(
                "goal {:?} does not match the layout generated by {} seed {}",
                self.goal, self.category, self.layout_seed
            )));
        }
        let held_out_cat = TaskCategory::HELD_OUT.contains(&self.category);
        let held_out_seed = self.layout_seed >= HELD_OUT_SEED_BASE;
        let ok = match self.split {
            Split::L0 => !held_out_cat && self.layout_seed < TRAIN_SEED_POOL,
            Split::L1 => !held_out_cat && held_out_seed,
            Split::L2 => held_out_cat && held_out_seed,
        };
        if !ok {
            return Err(Error::Config(format!(
                "{} seed {} is not a valid {} task",
                self.category, self.layout_seed, self.split
            )));
        }
        Ok(world)
    }
}

fn category_key(category: TaskCategory) -> u64 {
    0x9e37_79b9_7f4a_7c15u64.wrapping_mul(category.index() as u64 + 1)
}

/// Deterministically builds the initial world and goal for `(category, seed)`.
///
/// Layouts whose scripted solution would not fit [`EXPERT_BUDGET`] steps are
/// redrawn from the same stream.
pub fn build_world(category: TaskCategory, layout_seed: u64) -> Result<(WorldState, Goal)> {
    let mut rng = ChaCha8Rng::seed_from_u64(layout_seed ^ category_key(category));
    for _ in 0..MAX_LAYOUT_ATTEMPTS {
        let (world, goal) = sample_layout(&mut rng, category.treatment(), category.goal_count());
        if let Some(len) = expert::clean_solution_length(&world, &goal, category) {
            if len <= EXPERT_BUDGET {
                return Ok((world, goal));
            }
        }
    }
    Err(Error::Internal(format!(
        "no solvable layout for {category} seed {layout_seed}"
    )))
}

/// Deterministic list of `count` tasks for a split.
pub fn generate_split(split: Split, count: usize, master_seed: u64) -> Result<Vec<TaskSpec>> {
    if count == 0 {
        return Err(Error::Config("task count must be at least 1".into()));
    }
    let mut rng =
        ChaCha8Rng::seed_from_u64(master_seed ^ (0x51_7cc1_b727_220a * (split as u64 + 1)));
    let categories: &[TaskCategory] = match split {
        Split::L0 | Split::L1 => &TaskCategory::TRAINING,
        Split::L2 => &TaskCategory::HELD_OUT,
    };
    (0..count)
        .map(|i| {
            let category = categories[i % categories.len()];
            let seed = match split {
                Split::L0 => rng.gen_range(0..TRAIN_SEED_POOL),
                Split::L1 | Split::L2 => HELD_OUT_SEED_BASE + rng.gen_range(0..HELD_OUT_SEED_RANGE),
            };
            TaskSpec::new(category, seed, split)
        })
        .collect()
}

/// Samples training tasks (seen categories and seen layout seeds).
pub fn sample_training_tasks(rng: &mut impl Rng, count: usize) -> Result<Vec<TaskSpec>> {
    (0..count)
        .map(|_| {
            let category = TaskCategory::TRAINING[rng.gen_range(0..TaskCategory::TRAINING.len())];
            TaskSpec::new(category, rng.gen_range(0..TRAIN_SEED_POOL), Split::L0)
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct TaskRecord {
    category: String,
    seed: u64,
    split: String,
    goal: Goal,
}

/// Writes one JSON record per task.
pub fn write_task_file(path: &Path, tasks: &[TaskSpec]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for t in tasks {
        let rec = TaskRecord {
            category: t.category.as_str().to_string(),
            seed: t.layout_seed,
            split: t.split.as_str().to_string(),
            goal: t.goal.clone(),
        };
        let line = serde_json::to_string(&rec).map_err(|e| Error::Internal(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_task_file(path: &Path) -> Result<Vec<TaskSpec>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut tasks = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message,
        };
        let rec: TaskRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let task = TaskSpec {
            category: rec.category.parse()?,
            goal: rec.goal,
            layout_seed: rec.seed,
            split: rec.split.parse()?,
        };
        task.validate().map_err(|e| parse_err(e.to_string()))?;
        tasks.push(task);
    }
    Ok(tasks)
}
