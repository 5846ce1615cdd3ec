//! Featurised softmax policy over joint (meta-reasoning tag, action) choices.
//!
//! Each choice `(tag, a)` gets a sparse binary feature row `φ(s, tag, a)`
//! hashed into a fixed-size weight vector; the logit is `scale · θ·φ`. Rows
//! have a constant number of active features, so a decision point is stored
//! as one flat index buffer.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{entity_class, AgentView, MiniWorld, Observation, Treatment, DESKLAMP};
use crate::error::{Error, Result};
use crate::reward::TrajectoryContext;
use crate::tags::{self, MetaTag};
use crate::trajectory::{StepRecord, Trajectory};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const N_TAGS: usize = MetaTag::ALL.len();
const SHARED_FEATURES: usize = 16;
const TAG_FEATURES: usize = 8;
/// Active features per (tag, action) row.
pub const ROW_LEN: usize = SHARED_FEATURES + TAG_FEATURES;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// Hashing dimension (number of weights).
    pub dim: usize,
    /// Value of every active feature.
    pub scale: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            dim: 4096,
            scale: 1.0,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.dim > u32::MAX as usize {
            return Err(Error::Config(format!(
                "feature dim out of range: {}",
                self.dim
            )));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::Config(format!(
                "feature scale must be > 0, got {}",
                self.scale
            )));
        }
        Ok(())
    }
}

/// Policy weights plus the feature layout they were trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub features: FeatureConfig,
    pub weights: Vec<f64>,
    pub version: u64,
}

impl PolicyParams {
    pub fn zeros(features: FeatureConfig) -> Result<Self> {
        features.validate()?;
        Ok(Self {
            weights: vec![0.0; features.dim],
            features,
            version: 0,
        })
    }

    /// Gradient step `θ ← θ - lr·g`; bumps the version.
    pub fn apply_gradient(&mut self, grad: &[f64], lr: f64) -> Result<()> {
        if grad.len() != self.weights.len() {
            return Err(Error::Usage(format!(
                "gradient has {} entries, params have {}",
                grad.len(),
                self.weights.len()
            )));
        }
        for (w, g) in self.weights.iter_mut().zip(grad) {
            *w -= lr * g;
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Numerical("non-finite weight after update".into()));
        }
        self.version += 1;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ck = Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            params: self.clone(),
        };
        let text = serde_json::to_string(&ck).map_err(|e| Error::Internal(e.to_string()))?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(text.as_bytes())
            .and_then(|_| f.write_all(b"\n"))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        let found = value
            .get("format_version")
            .and_then(|v| v.as_u64())
            .unwrap_or(0) as u32;
        if found != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::SchemaVersion {
                path: path.to_path_buf(),
                expected: CHECKPOINT_FORMAT_VERSION,
                found,
            });
        }
        let ck: Checkpoint = serde_json::from_value(value).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: e.to_string(),
        })?;
        ck.params.features.validate()?;
        if ck.params.weights.len() != ck.params.features.dim {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: "weight count does not match feature dim".into(),
            });
        }
        Ok(ck.params)
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    params: PolicyParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Verb {
    GoTo,
    Take,
    Put,
    Open,
    Close,
    Clean,
    Heat,
    Cool,
    Use,
    Examine,
    Look,
    Inventory,
    Other,
}

/// Parsed shape of a candidate command: verb, object and receptacle names.
struct Shape<'a> {
    verb: Verb,
    object: Option<&'a str>,
    receptacle: Option<&'a str>,
}

fn shape(action: &str) -> Shape<'_> {
    let none = |verb| Shape {
        verb,
        object: None,
        receptacle: None,
    };
    if let Some(r) = action.strip_prefix("go to ") {
        return Shape {
            verb: Verb::GoTo,
            object: None,
            receptacle: Some(r),
        };
    }
    match action {
        "look" => return none(Verb::Look),
        "inventory" => return none(Verb::Inventory),
        _ => {}
    }
    let Some((verb, rest)) = action.split_once(' ') else {
        return none(Verb::Other);
    };
    let two = |sep: &str| {
        rest.split_once(sep)
            .map(|(o, r)| (Some(o), Some(r)))
            .unwrap_or((Some(rest), None))
    };
    let (verb, (object, receptacle)) = match verb {
        "take" => (Verb::Take, two(" from ")),
        "put" => (Verb::Put, two(" in/on ")),
        "clean" => (Verb::Clean, two(" with ")),
        "heat" => (Verb::Heat, two(" with ")),
        "cool" => (Verb::Cool, two(" with ")),
        "use" => (Verb::Use, (Some(rest), None)),
        "open" => (Verb::Open, (None, Some(rest))),
        "close" => (Verb::Close, (None, Some(rest))),
        "examine" => (Verb::Examine, (Some(rest), None)),
        _ => (Verb::Other, (None, None)),
    };
    Shape {
        verb,
        object,
        receptacle,
    }
}

impl Verb {
    fn treatment(self) -> Option<Treatment> {
        match self {
            Verb::Clean => Some(Treatment::Clean),
            Verb::Heat => Some(Treatment::Heat),
            Verb::Cool => Some(Treatment::Cool),
            Verb::Use => Some(Treatment::Lamp),
            _ => None,
        }
    }
}

/// What the agent is holding, relative to the goal.
#[derive(Clone, Copy)]
enum Hold {
    Empty,
    GoalPending,
    GoalReady,
    Other,
}

struct StateAtoms {
    hold: Hold,
    last_failed: bool,
    fail_bucket: u64,
    at_start: bool,
    first_step: bool,
    placed: bool,
    goal_visible: bool,
    category: u64,
    location_kind: u64,
}

fn state_atoms(view: &AgentView, ctx: &TrajectoryContext) -> StateAtoms {
    let goal = &view.goal;
    let goal_kind = goal.receptacle_kind.as_deref();
    let hold = match &view.held {
        None => Hold::Empty,
        Some(h) if entity_class(h) == goal.object_class => {
            if view.held_treated || goal.treatment == Treatment::None {
                Hold::GoalReady
            } else {
                Hold::GoalPending
            }
        }
        Some(_) => Hold::Other,
    };
    let here_kind = view.location.as_deref().map(entity_class);
    StateAtoms {
        hold,
        last_failed: ctx.last_failed,
        fail_bucket: ctx.consecutive_failures.min(3) as u64,
        at_start: view.location.is_none(),
        first_step: view.step_index == 0,
        placed: view.placed > 0,
        goal_visible: here_kind != goal_kind
            && view
                .visible
                .iter()
                .any(|v| entity_class(v) == goal.object_class),
        category: view.category.index() as u64,
        location_kind: here_kind.map_or(0, |k| short_hash(k) % 64 + 1),
    }
}

fn short_hash(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

#[inline]
fn mix(key: u64) -> u64 {
    let mut z = key.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
fn key(family: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(family << 56, |acc, &p| {
        mix(acc ^ p.wrapping_mul(0x1000_0000_01b3))
    })
}

/// Candidate actions and feature rows at one decision point.
///
/// Choice `j` is action `j / 4` paired with tag `MetaTag::ALL[j % 4]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub candidates: Vec<String>,
    rows: Vec<u32>,
}

impl Decision {
    pub fn n_choices(&self) -> usize {
        self.candidates.len() * N_TAGS
    }

    pub fn choice(&self, j: usize) -> (MetaTag, &str) {
        (MetaTag::ALL[j % N_TAGS], &self.candidates[j / N_TAGS])
    }

    pub fn index_of(&self, tag: MetaTag, action: &str) -> Option<usize> {
        self.candidates
            .iter()
            .position(|c| c == action)
            .map(|a| a * N_TAGS + tag.index())
    }

    fn row(&self, j: usize) -> &[u32] {
        &self.rows[j * ROW_LEN..(j + 1) * ROW_LEN]
    }

    pub fn logits(&self, params: &PolicyParams) -> Vec<f64> {
        let w = &params.weights;
        let s = params.features.scale;
        (0..self.n_choices())
            .map(|j| s * self.row(j).iter().map(|&i| w[i as usize]).sum::<f64>())
            .collect()
    }

    /// Log-probabilities of every choice.
    pub fn log_probs(&self, params: &PolicyParams) -> Result<Vec<f64>> {
        log_softmax(&self.logits(params))
    }

    /// Accumulates `Σ_j d_logits[j] · ∂z_j/∂θ` into `grad`.
    pub fn backprop(&self, d_logits: &[f64], scale: f64, grad: &mut [f64]) {
        for (j, &d) in d_logits.iter().enumerate() {
            if d != 0.0 {
                let v = d * scale;
                for &i in self.row(j) {
                    grad[i as usize] += v;
                }
            }
        }
    }
}

pub fn log_softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::Numerical("non-finite logit".into()));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    Ok(logits.iter().map(|z| z - lse).collect())
}

/// Candidate actions: the admissible set plus the previous action when it is
/// no longer admissible (re-issuing it yields "Nothing happens.").
pub fn candidate_actions(obs: &Observation, ctx: &TrajectoryContext) -> Vec<String> {
    let mut out = obs.admissible_actions.clone();
    if let Some(last) = &ctx.last_action {
        if !last.is_empty() && !out.contains(last) {
            out.push(last.clone());
        }
    }
    out
}

/// Builds the feature rows for every (tag, candidate) pair.
pub fn featurize(
    obs: &Observation,
    ctx: &TrajectoryContext,
    cfg: &FeatureConfig,
) -> Result<Decision> {
    let candidates = candidate_actions(obs, ctx);
    if candidates.is_empty() {
        return Err(Error::Usage("no candidate actions".into()));
    }
    let view = &obs.view;
    let st = state_atoms(view, ctx);
    let goal = &view.goal;
    let dim = cfg.dim as u64;
    let mut rows = Vec::with_capacity(candidates.len() * N_TAGS * ROW_LEN);
    let mut shared = [0u32; SHARED_FEATURES];
    for action in &candidates {
        let sh = shape(action);
        let verb = sh.verb as u64;
        let repeat = ctx.last_action.as_deref() == Some(action.as_str());
        let visited = ctx.is_visited(action);
        let tried = ctx.tried.contains(&(obs.state_fingerprint, action.clone()));
        let goal_obj = sh
            .object
            .is_some_and(|o| entity_class(o) == goal.object_class);
        let goal_recep = matches!(sh.verb, Verb::GoTo | Verb::Put | Verb::Open | Verb::Close)
            && sh.receptacle.map(entity_class) == goal.receptacle_kind.as_deref();
        let treat_match = match sh.verb.treatment() {
            Some(Treatment::Lamp) => {
                goal.treatment == Treatment::Lamp && sh.object.map(entity_class) == Some(DESKLAMP)
            }
            Some(t) => t == goal.treatment,
            None => false,
        };
        let appliance = sh.verb == Verb::GoTo
            && goal.treatment.appliance().is_some()
            && sh.receptacle.map(entity_class) == goal.treatment.appliance();
        let hold = st.hold as u64;
        let b = |x: bool| x as u64;
        let shared_keys = [
            key(1, &[verb]),
            key(2, &[verb, hold]),
            key(3, &[verb, b(repeat), b(st.last_failed)]),
            key(4, &[verb, b(visited), hold]),
            key(5, &[verb, b(goal_obj), hold]),
            key(6, &[verb, b(goal_recep), hold]),
            key(7, &[verb, b(treat_match), hold]),
            key(8, &[verb, b(appliance), hold]),
            key(9, &[verb, b(st.goal_visible), b(goal_obj)]),
            key(10, &[verb, b(st.placed), b(goal_obj), b(goal_recep)]),
            key(11, &[verb, st.category]),
            key(12, &[verb, b(st.at_start)]),
            key(13, &[verb, st.location_kind]),
            key(14, &[verb, st.fail_bucket]),
            // verb-agnostic: transfer to verbs never seen in training
            key(15, &[b(tried), b(st.last_failed)]),
            key(16, &[b(treat_match), hold]),
        ];
        for (slot, k) in shared.iter_mut().zip(shared_keys) {
            *slot = (mix(k) % dim) as u32;
        }
        for tag in MetaTag::ALL {
            let t = tag.index() as u64;
            let tag_keys = [
                key(20, &[t]),
                key(21, &[t, b(st.first_step)]),
                key(22, &[t, st.fail_bucket]),
                key(23, &[t, verb]),
                key(24, &[t, verb, b(visited)]),
                key(25, &[t, b(repeat)]),
                key(26, &[t, hold]),
                key(27, &[t, b(tried)]),
            ];
            rows.extend_from_slice(&shared);
            rows.extend(tag_keys.iter().map(|&k| (mix(k) % dim) as u32));
        }
    }
    Ok(Decision { candidates, rows })
}

/// Normalised joint distribution over (tag, action) pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDistribution {
    pub decision: Decision,
    pub log_probs: Vec<f64>,
}

impl JointDistribution {
    pub fn prob(&self, j: usize) -> f64 {
        self.log_probs[j].exp()
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (j, &lp) in self.log_probs.iter().enumerate() {
            if lp > self.log_probs[best] {
                best = j;
            }
        }
        best
    }

    /// Inverse-CDF sample.
    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (j, &lp) in self.log_probs.iter().enumerate() {
            acc += lp.exp();
            if u < acc {
                return j;
            }
        }
        self.log_probs.len() - 1
    }
}

pub fn distribution(
    obs: &Observation,
    ctx: &TrajectoryContext,
    params: &PolicyParams,
) -> Result<JointDistribution> {
    let decision = featurize(obs, ctx, &params.features)?;
    let log_probs = decision.log_probs(params)?;
    Ok(JointDistribution {
        decision,
        log_probs,
    })
}

/// A sampled agent turn.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledStep {
    pub output_text: String,
    pub tag: MetaTag,
    pub action: String,
    pub choice: usize,
    pub logprob: f64,
    pub corrupted: bool,
}

/// Renders choice `j` of a distribution as tagged text, dropping the tag pair
/// with probability `p_noise`.
pub fn render_choice(
    dist: &JointDistribution,
    j: usize,
    view: &AgentView,
    p_noise: f64,
    rng: &mut impl Rng,
) -> SampledStep {
    let (tag, action) = dist.decision.choice(j);
    let reasoning = tags::reasoning_sentence(tag, view, action);
    let corrupted = p_noise > 0.0 && rng.gen::<f64>() < p_noise;
    let output_text = if corrupted {
        tags::render_untagged(&reasoning, action)
    } else {
        tags::render_with(tag, &reasoning, action)
    };
    SampledStep {
        output_text,
        tag,
        action: action.to_string(),
        choice: j,
        logprob: dist.log_probs[j],
        corrupted,
    }
}

/// Samples a (tag, action) pair and renders it.
pub fn sample_step(
    obs: &Observation,
    ctx: &TrajectoryContext,
    params: &PolicyParams,
    p_noise: f64,
    rng: &mut impl Rng,
) -> Result<(JointDistribution, SampledStep)> {
    let dist = distribution(obs, ctx, params)?;
    let j = dist.sample(rng);
    let step = render_choice(&dist, j, &obs.view, p_noise, rng);
    Ok((dist, step))
}

/// Mean negative log-likelihood of gold choices and its gradient.
pub fn bc_loss_and_grad(
    examples: &[(Decision, usize)],
    params: &PolicyParams,
) -> Result<(f64, Vec<f64>)> {
    if examples.is_empty() {
        return Err(Error::Usage("no demonstration steps".into()));
    }
    let n = examples.len() as f64;
    let mut grad = vec![0.0; params.weights.len()];
    let mut loss = 0.0;
    for (d, gold) in examples {
        let lp = d.log_probs(params)?;
        loss -= lp[*gold] / n;
        let mut dz: Vec<f64> = lp.iter().map(|l| l.exp() / n).collect();
        dz[*gold] -= 1.0 / n;
        d.backprop(&dz, params.features.scale, &mut grad);
    }
    Ok((loss, grad))
}

/// Mean negative log-likelihood only.
pub fn bc_loss(examples: &[(Decision, usize)], params: &PolicyParams) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Usage("no demonstration steps".into()));
    }
    let mut total = 0.0;
    for (d, gold) in examples {
        total -= d.log_probs(params)?[*gold];
    }
    Ok(total / examples.len() as f64)
}

/// Per-step SGD over demonstration steps, `epochs` passes in a fixed order
/// shuffled by `rng`. Returns the updated params and the full-data loss
/// after each epoch (index 0 is the loss before training).
pub fn bc_train(
    examples: &[(Decision, usize)],
    params: &PolicyParams,
    epochs: usize,
    lr: f64,
    rng: &mut impl Rng,
) -> Result<(PolicyParams, Vec<f64>)> {
    use rand::seq::SliceRandom;
    if examples.is_empty() {
        return Err(Error::Usage("empty demonstration set".into()));
    }
    let mut p = params.clone();
    let mut losses = vec![bc_loss(examples, &p)?];
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let scale = p.features.scale;
    for _ in 0..epochs {
        order.shuffle(rng);
        for &i in &order {
            let (d, gold) = &examples[i];
            let lp = d.log_probs(&p)?;
            for (j, l) in lp.iter().enumerate() {
                let g = l.exp() - (j == *gold) as u8 as f64;
                if g != 0.0 {
                    let v = lr * g * scale;
                    for &k in d.row(j) {
                        p.weights[k as usize] -= v;
                    }
                }
            }
        }
        if p.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Numerical(
                "non-finite weight during behaviour cloning".into(),
            ));
        }
        p.version += 1;
        losses.push(bc_loss(examples, &p)?);
    }
    Ok((p, losses))
}

/// Replays trajectories through the environment and pairs every step's
/// decision point with the index of the recorded (tag, action) choice.
pub fn replay_examples(
    demos: &[Trajectory],
    cfg: &FeatureConfig,
) -> Result<Vec<(Decision, usize)>> {
    let mut out = Vec::new();
    for traj in demos {
        for (obs, ctx, step) in replay(traj)? {
            let d = featurize(&obs, &ctx, cfg)?;
            let gold = d.index_of(step.parsed.tag, step.action()).ok_or_else(|| {
                Error::Internal(format!(
                    "recorded action `{}` is not a candidate",
                    step.action()
                ))
            })?;
            out.push((d, gold));
        }
    }
    Ok(out)
}

/// Re-runs a trajectory's actions, yielding the observation and context each
/// step was taken from.
pub fn replay(traj: &Trajectory) -> Result<Vec<(Observation, TrajectoryContext, &StepRecord)>> {
    let mut env = MiniWorld::new();
    let mut obs = env.reset(&traj.task)?;
    let mut ctx = TrajectoryContext::new(obs.state_fingerprint);
    let mut out = Vec::with_capacity(traj.steps.len());
    for step in &traj.steps {
        let next = env.step(step.action())?.observation;
        if next.text != step.observation || next.state_fingerprint != step.next_fingerprint {
            return Err(Error::Usage(format!(
                "trajectory for {} seed {} does not replay at step {}",
                traj.task.category, traj.task.layout_seed, step.step_index
            )));
        }
        let prev = std::mem::replace(&mut obs, next);
        out.push((prev, ctx.clone(), step));
        ctx.record(step);
    }
    Ok(out)
}

/// Behaviour cloning on demonstrations: minimises the mean negative
/// log-likelihood of the demonstrated (tag, action) pairs with per-step SGD.
pub fn bc_update(
    demos: &[Trajectory],
    params: &PolicyParams,
    epochs: usize,
    lr: f64,
    rng: &mut impl Rng,
) -> Result<(PolicyParams, Vec<f64>)> {
    if demos.is_empty() {
        return Err(Error::Usage("empty demonstration set".into()));
    }
    let examples = replay_examples(demos, &params.features)?;
    bc_train(&examples, params, epochs, lr, rng)
}
