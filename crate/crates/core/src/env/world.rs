//! World state, layout generation and the transition function.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Receptacle kinds that can hold objects, with their closability.
pub(crate) const STORAGE_KINDS: &[(&str, bool)] = &[
    ("cabinet", true),
    ("drawer", true),
    ("safe", true),
    ("shelf", false),
    ("dresser", false),
    ("desk", false),
    ("sidetable", false),
    ("countertop", false),
    ("diningtable", false),
    ("coffeetable", false),
    ("garbagecan", false),
    ("sofa", false),
    ("armchair", false),
    ("bed", false),
];

pub(crate) const PORTABLE_CLASSES: &[&str] = &[
    "keychain",
    "soapbar",
    "apple",
    "mug",
    "cup",
    "potato",
    "tomato",
    "egg",
    "plate",
    "bowl",
    "pen",
    "pencil",
    "book",
    "creditcard",
    "cellphone",
    "candle",
    "spraybottle",
    "vase",
    "statue",
    "cd",
    "remotecontrol",
    "pillow",
];

pub const SINK: &str = "sinkbasin";
pub const MICROWAVE: &str = "microwave";
pub const FRIDGE: &str = "fridge";
pub const DESKLAMP: &str = "desklamp";

/// What must be done to the goal object before the goal counts as met.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Treatment {
    None,
    Clean,
    Heat,
    Cool,
    /// Hold the object while switching on a desk lamp.
    Lamp,
}

impl Treatment {
    /// The appliance kind that performs this treatment, if any.
    pub fn appliance(self) -> Option<&'static str> {
        match self {
            Treatment::Clean => Some(SINK),
            Treatment::Heat => Some(MICROWAVE),
            Treatment::Cool => Some(FRIDGE),
            Treatment::None | Treatment::Lamp => None,
        }
    }

    /// The verb used in action strings for this treatment, if any.
    pub fn verb(self) -> Option<&'static str> {
        match self {
            Treatment::Clean => Some("clean"),
            Treatment::Heat => Some("heat"),
            Treatment::Cool => Some("cool"),
            Treatment::None | Treatment::Lamp => None,
        }
    }
}

/// Structured goal predicate.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Goal {
    pub object_class: String,
    pub count: u8,
    /// Receptacle kind that must end up holding the objects; absent for lamp tasks.
    pub receptacle_kind: Option<String>,
    pub treatment: Treatment,
}

impl Goal {
    pub fn describe(&self) -> String {
        let kind = self.receptacle_kind.as_deref().unwrap_or("");
        let cls = &self.object_class;
        match (self.treatment, self.count) {
            (Treatment::Lamp, _) => format!("look at the {cls} under the {DESKLAMP}."),
            (Treatment::None, 2) => format!("put two {cls}s in the {kind}."),
            (Treatment::None, _) => format!("put a {cls} in the {kind}."),
            (Treatment::Clean, _) => format!("put a clean {cls} in the {kind}."),
            (Treatment::Heat, _) => format!("put a hot {cls} in the {kind}."),
            (Treatment::Cool, _) => format!("put a cool {cls} in the {kind}."),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Receptacle {
    pub name: String,
    pub kind: String,
    pub closable: bool,
    pub is_open: bool,
}

impl Receptacle {
    pub fn contents_visible(&self) -> bool {
        !self.closable || self.is_open
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Place {
    In(usize),
    Inventory,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Item {
    pub name: String,
    pub class: String,
    pub portable: bool,
    pub place: Place,
    pub clean: bool,
    pub hot: bool,
    pub cold: bool,
}

impl Item {
    pub fn has(&self, treatment: Treatment) -> bool {
        match treatment {
            Treatment::None => true,
            Treatment::Clean => self.clean,
            Treatment::Heat => self.hot,
            Treatment::Cool => self.cold,
            Treatment::Lamp => false,
        }
    }
}

/// Complete simulator state.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct WorldState {
    pub receptacles: Vec<Receptacle>,
    pub items: Vec<Item>,
    /// `None` means the agent stands in the middle of the room.
    pub agent_at: Option<usize>,
    pub lamp_on: bool,
    pub step_index: u32,
}

/// A concrete, executable command resolved from an admissible action string.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    GoTo(usize),
    Open(usize),
    Close(usize),
    Take(usize, usize),
    Put(usize, usize),
    Treat(Treatment, usize, usize),
    UseLamp(usize),
    Look,
    Inventory,
    ExamineReceptacle(usize),
    ExamineItem(usize),
}

impl Command {
    pub fn is_read_only(self) -> bool {
        matches!(
            self,
            Command::Look
                | Command::Inventory
                | Command::ExamineReceptacle(_)
                | Command::ExamineItem(_)
        )
    }
}

impl WorldState {
    pub fn held(&self) -> Option<usize> {
        self.items.iter().position(|i| i.place == Place::Inventory)
    }

    pub fn items_in(&self, r: usize) -> impl Iterator<Item = usize> + '_ {
        self.items
            .iter()
            .enumerate()
            .filter(move |(_, it)| it.place == Place::In(r))
            .map(|(i, _)| i)
    }

    pub fn visible_items(&self) -> Vec<usize> {
        match self.agent_at {
            Some(r) if self.receptacles[r].contents_visible() => self.items_in(r).collect(),
            _ => Vec::new(),
        }
    }

    pub fn lamp_location(&self) -> Option<usize> {
        self.items.iter().find_map(|it| match it.place {
            Place::In(r) if it.class == DESKLAMP => Some(r),
            _ => None,
        })
    }

    /// Number of goal objects currently satisfying a placement goal.
    pub fn goal_progress(&self, goal: &Goal) -> u8 {
        let Some(kind) = goal.receptacle_kind.as_deref() else {
            return 0;
        };
        self.items
            .iter()
            .filter(|it| it.class == goal.object_class && it.has(goal.treatment))
            .filter(|it| match it.place {
                Place::In(r) => self.receptacles[r].kind == kind,
                Place::Inventory => false,
            })
            .count() as u8
    }

    pub fn goal_satisfied(&self, goal: &Goal) -> bool {
        if goal.treatment == Treatment::Lamp {
            let holding = self
                .held()
                .is_some_and(|h| self.items[h].class == goal.object_class);
            return holding
                && self.lamp_on
                && self.agent_at.is_some()
                && self.agent_at == self.lamp_location();
        }
        self.goal_progress(goal) >= goal.count
    }

    /// Every admissible action string with the command it resolves to, in a
    /// stable order.
    pub fn admissible(&self) -> Vec<(String, Command)> {
        let mut out = Vec::new();
        for (r, rec) in self.receptacles.iter().enumerate() {
            if self.agent_at != Some(r) {
                out.push((format!("go to {}", rec.name), Command::GoTo(r)));
            }
        }
        let held = self.held();
        if let Some(r) = self.agent_at {
            let rec = &self.receptacles[r];
            if rec.closable {
                if rec.is_open {
                    out.push((format!("close {}", rec.name), Command::Close(r)));
                } else {
                    out.push((format!("open {}", rec.name), Command::Open(r)));
                }
            }
            if rec.contents_visible() {
                if held.is_none() {
                    for i in self.items_in(r) {
                        if self.items[i].portable {
                            out.push((
                                format!("take {} from {}", self.items[i].name, rec.name),
                                Command::Take(i, r),
                            ));
                        }
                    }
                }
                if let Some(h) = held {
                    out.push((
                        format!("put {} in/on {}", self.items[h].name, rec.name),
                        Command::Put(h, r),
                    ));
                }
            }
            if let Some(h) = held {
                for t in [Treatment::Clean, Treatment::Heat, Treatment::Cool] {
                    if t.appliance() == Some(rec.kind.as_str()) && !self.items[h].has(t) {
                        out.push((
                            format!(
                                "{} {} with {}",
                                t.verb().unwrap_or_default(),
                                self.items[h].name,
                                rec.name
                            ),
                            Command::Treat(t, h, r),
                        ));
                    }
                }
            }
            if rec.contents_visible() && !self.lamp_on {
                for i in self.items_in(r) {
                    if self.items[i].class == DESKLAMP {
                        out.push((format!("use {}", self.items[i].name), Command::UseLamp(i)));
                    }
                }
            }
            out.push((
                format!("examine {}", rec.name),
                Command::ExamineReceptacle(r),
            ));
        }
        for i in self.visible_items().into_iter().chain(held) {
            out.push((
                format!("examine {}", self.items[i].name),
                Command::ExamineItem(i),
            ));
        }
        out.push(("look".to_string(), Command::Look));
        out.push(("inventory".to_string(), Command::Inventory));
        out
    }

    /// Applies an admissible command and returns the rendered observation.
    pub fn apply(&mut self, cmd: Command) -> String {
        match cmd {
            Command::GoTo(r) => {
                self.agent_at = Some(r);
                format!(
                    "You arrive at {}. {}",
                    self.receptacles[r].name,
                    self.describe_receptacle(r)
                )
            }
            Command::Open(r) => {
                self.receptacles[r].is_open = true;
                format!(
                    "You open the {}. {}",
                    self.receptacles[r].name,
                    self.describe_receptacle(r)
                )
            }
            Command::Close(r) => {
                self.receptacles[r].is_open = false;
                format!("You close the {}.", self.receptacles[r].name)
            }
            Command::Take(i, r) => {
                self.items[i].place = Place::Inventory;
                format!(
                    "You pick up the {} from the {}.",
                    self.items[i].name, self.receptacles[r].name
                )
            }
            Command::Put(i, r) => {
                self.items[i].place = Place::In(r);
                format!(
                    "You put the {} in/on the {}.",
                    self.items[i].name, self.receptacles[r].name
                )
            }
            Command::Treat(t, i, r) => {
                let item = &mut self.items[i];
                match t {
                    Treatment::Clean => item.clean = true,
                    Treatment::Heat => {
                        item.hot = true;
                        item.cold = false;
                    }
                    Treatment::Cool => {
                        item.cold = true;
                        item.hot = false;
                    }
                    Treatment::None | Treatment::Lamp => {}
                }
                format!(
                    "You {} the {} using the {}.",
                    t.verb().unwrap_or_default(),
                    self.items[i].name,
                    self.receptacles[r].name
                )
            }
            Command::UseLamp(i) => {
                self.lamp_on = true;
                format!("You turn on the {}.", self.items[i].name)
            }
            Command::Look => match self.agent_at {
                None => self.describe_room(),
                Some(r) => format!(
                    "You are facing the {}. Next to it, you see nothing.",
                    self.receptacles[r].name
                ),
            },
            Command::Inventory => match self.held() {
                Some(h) => format!("You are carrying: a {}.", self.items[h].name),
                None => "You are not carrying anything.".to_string(),
            },
            Command::ExamineReceptacle(r) => self.describe_receptacle(r),
            Command::ExamineItem(i) => {
                let it = &self.items[i];
                let mut states = Vec::new();
                if it.clean {
                    states.push("clean");
                }
                if it.hot {
                    states.push("hot");
                }
                if it.cold {
                    states.push("cold");
                }
                if it.class == DESKLAMP && self.lamp_on {
                    states.push("turned on");
                }
                if states.is_empty() {
                    format!("There's nothing special about {}.", it.name)
                } else {
                    format!("The {} is {}.", it.name, states.join(" and "))
                }
            }
        }
    }

    pub fn describe_receptacle(&self, r: usize) -> String {
        let rec = &self.receptacles[r];
        let names: Vec<&str> = self
            .items_in(r)
            .map(|i| self.items[i].name.as_str())
            .collect();
        if rec.closable {
            if rec.is_open {
                format!(
                    "The {} is open. In it, you see {}.",
                    rec.name,
                    list_phrase(&names)
                )
            } else {
                format!("The {} is closed.", rec.name)
            }
        } else {
            format!("On the {}, you see {}.", rec.name, list_phrase(&names))
        }
    }

    pub fn describe_room(&self) -> String {
        let names: Vec<&str> = self.receptacles.iter().map(|r| r.name.as_str()).collect();
        format!(
            "You are in the middle of a room. Looking quickly around you, you see {}.",
            list_phrase(&names)
        )
    }

    /// Stable 64-bit digest of everything except the step counter.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv64::new();
        h.write_u64(self.agent_at.map_or(u64::MAX, |r| r as u64));
        h.write_u64(self.lamp_on as u64);
        for rec in &self.receptacles {
            h.write_u64(rec.is_open as u64);
        }
        for it in &self.items {
            h.write_u64(match it.place {
                Place::In(r) => r as u64,
                Place::Inventory => u64::MAX,
            });
            h.write_u64((it.clean as u64) | (it.hot as u64) << 1 | (it.cold as u64) << 2);
        }
        h.finish()
    }
}

/// "a x, a y, and a z" in the style of household text-world transcripts.
pub(crate) fn list_phrase(names: &[&str]) -> String {
    match names {
        [] => "nothing".to_string(),
        [one] => format!("a {one}"),
        [init @ .., last] => {
            let head: Vec<String> = init.iter().map(|n| format!("a {n}")).collect();
            format!("{}, and a {last}", head.join(", "))
        }
    }
}

struct Fnv64(u64);

impl Fnv64 {
    fn new() -> Self {
        Fnv64(0xcbf2_9ce4_8422_2325)
    }

    fn write_u64(&mut self, v: u64) {
        for b in v.to_le_bytes() {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    fn finish(&self) -> u64 {
        self.0
    }
}

/// Draws a fresh layout and a goal for it. Validity (solvability) is checked
/// by the caller.
pub(crate) fn sample_layout(
    rng: &mut ChaCha8Rng,
    treatment: Treatment,
    count: u8,
) -> (WorldState, Goal) {
    let n_storage = rng.gen_range(3..=7usize);
    let mut kinds: Vec<(&str, bool)> = Vec::with_capacity(n_storage);
    for _ in 0..n_storage {
        kinds.push(*STORAGE_KINDS.choose(rng).expect("non-empty"));
    }
    // the lamp needs an open surface to stand on
    if kinds.iter().all(|(_, closable)| *closable) {
        let surfaces: Vec<_> = STORAGE_KINDS.iter().filter(|(_, c)| !c).collect();
        kinds[0] = **surfaces.choose(rng).expect("non-empty");
    }
    let mut specs: Vec<(String, bool)> = kinds.iter().map(|(k, c)| (k.to_string(), *c)).collect();
    specs.push((SINK.to_string(), false));
    specs.push((MICROWAVE.to_string(), true));
    specs.push((FRIDGE.to_string(), true));
    specs.shuffle(rng);

    let mut counter = std::collections::HashMap::<String, u32>::new();
    let receptacles: Vec<Receptacle> = specs
        .into_iter()
        .map(|(kind, closable)| {
            let n = counter.entry(kind.clone()).or_insert(0);
            *n += 1;
            Receptacle {
                name: format!("{kind} {n}"),
                kind,
                closable,
                is_open: false,
            }
        })
        .collect();

    let storage: Vec<usize> = (0..receptacles.len())
        .filter(|&r| STORAGE_KINDS.iter().any(|(k, _)| *k == receptacles[r].kind))
        .collect();
    let surfaces: Vec<usize> = storage
        .iter()
        .copied()
        .filter(|&r| !receptacles[r].closable)
        .collect();

    let goal_class = PORTABLE_CLASSES.choose(rng).expect("non-empty").to_string();
    let receptacle_kind = if treatment == Treatment::Lamp {
        None
    } else {
        Some(
            receptacles[*storage.choose(rng).expect("non-empty")]
                .kind
                .clone(),
        )
    };
    let source_slots: Vec<usize> = storage
        .iter()
        .copied()
        .filter(|&r| Some(&receptacles[r].kind) != receptacle_kind.as_ref())
        .collect();

    let mut placements: Vec<(String, bool, usize)> = Vec::new();
    let lamp_at = *surfaces.choose(rng).expect("surface exists");
    placements.push((DESKLAMP.to_string(), false, lamp_at));
    let n_goal = count as usize + rng.gen_range(0..=1usize);
    if !source_slots.is_empty() {
        for _ in 0..n_goal {
            placements.push((
                goal_class.clone(),
                true,
                *source_slots.choose(rng).expect("non-empty"),
            ));
        }
    }
    let n_items = rng.gen_range(8..=15usize);
    while placements.len() < n_items {
        let cls = loop {
            let c = *PORTABLE_CLASSES.choose(rng).expect("non-empty");
            if c != goal_class {
                break c;
            }
        };
        placements.push((
            cls.to_string(),
            true,
            *storage.choose(rng).expect("non-empty"),
        ));
    }
    placements.shuffle(rng);

    let mut counter = std::collections::HashMap::<String, u32>::new();
    let items = placements
        .into_iter()
        .map(|(class, portable, r)| {
            let n = counter.entry(class.clone()).or_insert(0);
            *n += 1;
            Item {
                name: format!("{class} {n}"),
                class,
                portable,
                place: Place::In(r),
                clean: false,
                hot: false,
                cold: false,
            }
        })
        .collect();

    let world = WorldState {
        receptacles,
        items,
        agent_at: None,
        lamp_on: false,
        step_index: 0,
    };
    let goal = Goal {
        object_class: goal_class,
        count,
        receptacle_kind,
        treatment,
    };
    (world, goal)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn list_phrase_matches_transcript_style() {
        assert_eq!(list_phrase(&[]), "nothing");
        assert_eq!(list_phrase(&["box 1"]), "a box 1");
        assert_eq!(
            list_phrase(&["box 1", "creditcard 1", "keychain 2"]),
            "a box 1, a creditcard 1, and a keychain 2"
        );
    }

    #[test]
    fn fingerprint_ignores_step_counter() {
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(3);
        let (mut w, _) = sample_layout(&mut rng, Treatment::None, 1);
        let fp = w.fingerprint();
        w.step_index += 5;
        assert_eq!(fp, w.fingerprint());
        w.agent_at = Some(0);
        assert_ne!(fp, w.fingerprint());
    }
}
