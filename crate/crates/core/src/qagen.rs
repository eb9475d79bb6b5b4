//! Question-answer generation over scene models: clip and action sampling,
//! relation computation, template rendering, dataset assembly and
//! validation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::{localize_object, CloudError, LocalizeOptions};
use crate::geom::{mean_pose, GeomError, Pose, Vec3};
use crate::register::{pose_descriptor, register_frame, FrameId, RegisterError};
use crate::relations::{
    closer_than, direction_change, distance_trend, estimate_navigation, hand_proximity, relative_direction, same_side,
    Closer, Direction, Hand, IdentityRefiner, NavigationRefiner, NavigationVerdict, RelationError, Thresholds,
    TimedPose, TrendKind,
};
use crate::scene::{ActionId, ActionInterval, ObjectId, SceneModel, SceneObject};

pub const MIN_CLIP_SECONDS: f64 = 20.0;
pub const MAX_CLIP_SECONDS: f64 = 40.0;
pub const DEFAULT_MIN_GAP: f64 = 8.0;
pub const DEFAULT_MAX_ATTEMPTS: usize = 50;
/// Verbs that leave an item somewhere.
pub const PLACEMENT_VERBS: [&str; 2] = ["put down", "place"];
/// Training-split record counts per task of the reference dataset.
pub const REFERENCE_TASK_COUNTS: [(TaskKind, u32); 5] = [
    (TaskKind::RelativeDirection, 4765),
    (TaskKind::RelativeDistance, 4796),
    (TaskKind::FindMyItem, 4118),
    (TaskKind::FurnitureAffordance, 4192),
    (TaskKind::ActionPlanning, 6500),
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QaError {
    #[error("scene too short")]
    SceneTooShort,
    #[error("no eligible action pair")]
    NoEligiblePair,
    #[error("no placement action in clip")]
    NoPlacement,
    #[error("no action after clip")]
    NoNextAction,
    #[error("scene needs at least {0} furniture objects")]
    TooFewFurniture(usize),
    #[error("unknown object {0}")]
    UnknownObject(ObjectId),
    #[error("unknown action {0}")]
    UnknownAction(ActionId),
    #[error("no registered frames in [{0}, {1}]")]
    NoFrames(f64, f64),
    #[error("no mask for object {object} at frame {frame}")]
    NoMask { object: ObjectId, frame: usize },
    #[error("template index {index} out of range for {kind}")]
    Template { kind: &'static str, index: u8 },
    #[error("localization: {0}")]
    Cloud(#[from] CloudError),
    #[error("relation: {0}")]
    Relation(#[from] RelationError),
    #[error("registration: {0}")]
    Register(String),
    #[error("geometry: {0}")]
    Geom(#[from] GeomError),
    #[error("invalid task mix: {0}")]
    Mix(String),
}

impl From<RegisterError> for QaError {
    fn from(e: RegisterError) -> Self {
        QaError::Register(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    RelativeDirection,
    RelativeDistance,
    FindMyItem,
    FurnitureAffordance,
    ActionPlanning,
}

impl TaskKind {
    pub const ALL: [TaskKind; 5] = [
        TaskKind::RelativeDirection,
        TaskKind::RelativeDistance,
        TaskKind::FindMyItem,
        TaskKind::FurnitureAffordance,
        TaskKind::ActionPlanning,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::RelativeDirection => "relative_direction",
            TaskKind::RelativeDistance => "relative_distance",
            TaskKind::FindMyItem => "find_my_item",
            TaskKind::FurnitureAffordance => "furniture_affordance",
            TaskKind::ActionPlanning => "action_planning",
        }
    }

    fn index(self) -> usize {
        Self::ALL.iter().position(|&t| t == self).expect("listed")
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = QaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| QaError::Mix(format!("unknown task '{s}'")))
    }
}

/// Target share of records per task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<TaskKind, f64>", into = "BTreeMap<TaskKind, f64>")]
pub struct TaskMix([f64; 5]);

impl TaskMix {
    pub fn new(fractions: [f64; 5]) -> Result<Self, QaError> {
        if fractions.iter().any(|f| !f.is_finite() || *f < 0.0) {
            return Err(QaError::Mix("fractions must be finite and non-negative".into()));
        }
        let sum: f64 = fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(QaError::Mix(format!("fractions sum to {sum}, expected 1")));
        }
        Ok(Self(fractions))
    }

    pub fn uniform() -> Self {
        Self([0.2; 5])
    }

    /// Fraction for `task`.
    pub fn get(&self, task: TaskKind) -> f64 {
        self.0[task.index()]
    }

    /// Parses `task=fraction,...`. Unlisted tasks get zero.
    pub fn parse(spec: &str) -> Result<Self, QaError> {
        let mut fractions = [0.0; 5];
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (name, value) = part
                .split_once('=')
                .ok_or_else(|| QaError::Mix(format!("expected task=fraction, got '{part}'")))?;
            let task: TaskKind = name.trim().parse()?;
            fractions[task.index()] = value
                .trim()
                .parse()
                .map_err(|_| QaError::Mix(format!("bad fraction '{value}'")))?;
        }
        Self::new(fractions)
    }

    /// Per-task counts summing to `n`: floors of `n·fraction`, with the
    /// remainder going to the largest fractional parts (ties in task order).
    pub fn allocate(&self, n: usize) -> [usize; 5] {
        let quotas = self.0.map(|f| n as f64 * f);
        let mut counts = quotas.map(|q| q.floor() as usize);
        let assigned: usize = counts.iter().sum();
        let mut order: Vec<usize> = (0..5).collect();
        order.sort_by(|&a, &b| {
            let (fa, fb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        for &i in order.iter().take(n.saturating_sub(assigned)) {
            counts[i] += 1;
        }
        counts
    }
}

impl Default for TaskMix {
    fn default() -> Self {
        let total: u32 = REFERENCE_TASK_COUNTS.iter().map(|(_, c)| c).sum();
        let mut fractions = [0.0; 5];
        for (task, count) in REFERENCE_TASK_COUNTS {
            fractions[task.index()] = f64::from(count) / f64::from(total);
        }
        Self(fractions)
    }
}

impl TryFrom<BTreeMap<TaskKind, f64>> for TaskMix {
    type Error = QaError;

    fn try_from(map: BTreeMap<TaskKind, f64>) -> Result<Self, Self::Error> {
        let mut fractions = [0.0; 5];
        for (task, f) in map {
            fractions[task.index()] = f;
        }
        Self::new(fractions)
    }
}

impl From<TaskMix> for BTreeMap<TaskKind, f64> {
    fn from(mix: TaskMix) -> Self {
        TaskKind::ALL.into_iter().map(|t| (t, mix.get(t))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Clip {
    pub start_time: f64,
    pub end_time: f64,
    /// Actions lying entirely inside the clip, in time order.
    pub action_ids: Vec<ActionId>,
}

impl Clip {
    pub fn duration(&self) -> f64 {
        self.end_time - self.start_time
    }
}

/// Generation knobs. Defaults match the pipeline constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub thresholds: Thresholds,
    /// Minimum seconds between the end of the first and the start of the
    /// last query action.
    pub min_gap: f64,
    /// Attempts per record before it is reported as a shortfall.
    pub max_attempts: usize,
    pub localize: LocalizeOptions,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            thresholds: Thresholds::default(),
            min_gap: DEFAULT_MIN_GAP,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            localize: LocalizeOptions::default(),
        }
    }
}

/// Actions completely inside `[start, end]`.
pub fn actions_within(scene: &SceneModel, start: f64, end: f64) -> Vec<ActionId> {
    scene
        .actions
        .iter()
        .filter(|a| a.start_time >= start && a.end_time <= end)
        .map(|a| a.action_id)
        .collect()
}

/// Samples a 20–40 s clip holding at least two complete actions.
pub fn sample_clip(scene: &SceneModel, seed: u64) -> Result<Clip, QaError> {
    let (t0, t1) = (scene.start_time(), scene.end_time());
    let span = t1 - t0;
    if span < MIN_CLIP_SECONDS || scene.actions.len() < 2 {
        return Err(QaError::SceneTooShort);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let longest = span.min(MAX_CLIP_SECONDS);
    // A few random durations, then the longest one, which admits the most starts.
    for attempt in 0..9 {
        let d = if attempt == 8 || longest <= MIN_CLIP_SECONDS {
            longest
        } else {
            rng.random_range(MIN_CLIP_SECONDS..=longest)
        };
        // Starts s for which actions i and i+1 both fit in [s, s + d].
        let windows: Vec<(f64, f64)> = scene
            .actions
            .windows(2)
            .map(|w| ((w[1].end_time - d).max(t0), w[0].start_time.min(t1 - d)))
            .filter(|(lo, hi)| lo <= hi)
            .collect();
        if windows.is_empty() {
            continue;
        }
        let total: f64 = windows.iter().map(|(lo, hi)| hi - lo).sum();
        let start = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = windows[windows.len() - 1].1;
            for &(lo, hi) in &windows {
                if target <= hi - lo {
                    pick = lo + target;
                    break;
                }
                target -= hi - lo;
            }
            pick
        } else {
            windows[rng.random_range(0..windows.len())].0
        };
        let end = start + d;
        let action_ids = actions_within(scene, start, end);
        if action_ids.len() >= 2 {
            return Ok(Clip {
                start_time: start,
                end_time: end,
                action_ids,
            });
        }
    }
    Err(QaError::SceneTooShort)
}

fn action<'a>(scene: &'a SceneModel, id: ActionId) -> Result<&'a ActionInterval, QaError> {
    scene.action(id).ok_or(QaError::UnknownAction(id))
}

fn object<'a>(scene: &'a SceneModel, id: ObjectId) -> Result<&'a SceneObject, QaError> {
    scene.object(id).ok_or(QaError::UnknownObject(id))
}

/// Picks the non-adjacent action pair with the longest gap, subject to
/// `gap ≥ min_gap` and each pair object being touched at most once in the
/// clip. Ties go to the earliest first action.
pub fn select_action_pair(scene: &SceneModel, clip: &Clip, min_gap: f64) -> Result<(ActionId, ActionId), QaError> {
    let actions: Vec<&ActionInterval> = clip.action_ids.iter().map(|&id| action(scene, id)).collect::<Result<_, _>>()?;
    let mut touches: BTreeMap<ObjectId, usize> = BTreeMap::new();
    for a in &actions {
        for &o in &a.object_refs {
            *touches.entry(o).or_default() += 1;
        }
    }
    let once = |a: &ActionInterval| a.object_refs.iter().all(|o| touches[o] <= 1) && !a.object_refs.is_empty();
    let mut best: Option<(f64, usize, usize)> = None;
    for i in 0..actions.len() {
        for k in i + 2..actions.len() {
            let gap = actions[k].start_time - actions[i].end_time;
            if gap < min_gap || !once(actions[i]) || !once(actions[k]) {
                continue;
            }
            if best.is_none_or(|(g, _, _)| gap > g) {
                best = Some((gap, i, k));
            }
        }
    }
    best.map(|(_, i, k)| (actions[i].action_id, actions[k].action_id))
        .ok_or(QaError::NoEligiblePair)
}

/// A scene with every track frame registered against its frame database.
pub struct PreparedScene<'a> {
    pub scene: &'a SceneModel,
    /// Registered pose per track frame.
    pub registered: Vec<TimedPose>,
}

impl<'a> PreparedScene<'a> {
    pub fn new(scene: &'a SceneModel) -> Result<Self, QaError> {
        let provider = scene.track_provider();
        let registered = scene
            .agent_track
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let r = register_frame(&scene.frame_db, i as FrameId, &pose_descriptor(&t.pose), &provider)?;
                Ok(TimedPose { time: t.time, pose: r.pose })
            })
            .collect::<Result<_, QaError>>()?;
        Ok(Self { scene, registered })
    }

    /// Mean registered pose over an action.
    pub fn action_pose(&self, a: &ActionInterval) -> Result<Pose, QaError> {
        let frames = self.scene.frames_in(a.start_time, a.end_time);
        if frames.is_empty() {
            return Err(QaError::NoFrames(a.start_time, a.end_time));
        }
        let poses: Vec<Pose> = self.registered[frames].iter().map(|t| t.pose).collect();
        Ok(mean_pose(&poses)?)
    }

    /// Registered pose at the frame nearest the clip end.
    pub fn clip_end_pose(&self, clip: &Clip) -> Pose {
        self.registered[self.scene.nearest_frame(clip.end_time)].pose
    }

    /// Furniture positions come from the annotation; items are localized
    /// from the cloud and their mask at the middle frame of `interaction`.
    pub fn object_position(&self, id: ObjectId, interaction: &ActionInterval, opts: LocalizeOptions) -> Result<Vec3, QaError> {
        let o = object(self.scene, id)?;
        if o.is_furniture {
            return Ok(o.position);
        }
        let frame = self
            .scene
            .median_frame(interaction.start_time, interaction.end_time)
            .ok_or(QaError::NoFrames(interaction.start_time, interaction.end_time))?;
        let mask = self.scene.mask(id, frame).ok_or(QaError::NoMask { object: id, frame })?;
        let loc = localize_object(
            &self.scene.point_cloud,
            mask,
            &self.scene.intrinsics,
            &self.registered[frame].pose,
            opts,
        )?;
        Ok(loc.position)
    }
}

/// Id and display text of a referenced object or action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Named {
    pub id: u32,
    pub name: String,
}

fn named_object(o: &SceneObject) -> Named {
    Named {
        id: o.object_id,
        name: o.name.clone(),
    }
}

fn named_action(a: &ActionInterval) -> Named {
    Named {
        id: a.action_id,
        name: a.label.clone(),
    }
}

/// Structured ground truth of a record. Question and answer text are pure
/// functions of this value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RelationPayload {
    HandChange {
        object: Named,
        first_action: Named,
        last_action: Named,
        before: Hand,
        after: Hand,
        changed: bool,
    },
    DirectionChange {
        object: Named,
        first_action: Named,
        last_action: Named,
        /// Directions proposed in the question.
        asked: [Direction; 2],
        before: Direction,
        after: Direction,
        changed: bool,
        answer_template: u8,
    },
    SameSide {
        objects: [Named; 2],
        action: Named,
        first: Direction,
        second: Direction,
        same: bool,
        question_template: u8,
    },
    DistanceTrend {
        object: Named,
        first_action: Named,
        last_action: Named,
        trend: TrendKind,
        slope: f64,
        distances: [f64; 5],
        question_template: u8,
        answer_template: u8,
    },
    CloserThan {
        objects: [Named; 2],
        action: Named,
        verdict: Closer,
        distances: [f64; 2],
        question_template: u8,
    },
    ItemLocation {
        object: Named,
        support: Named,
        placement: Named,
        direction: Direction,
        navigation: NavigationVerdict,
        question_template: u8,
    },
    ItemDelivery {
        object: Named,
        placement: Named,
        anchors: [Named; 2],
        verdict: Closer,
        distances: [f64; 2],
    },
    NextObject {
        options: Vec<Named>,
        answer: usize,
        next_action: Named,
        question_template: u8,
    },
    NextStep {
        completed: Vec<Named>,
        next_action: Named,
        navigation: NavigationVerdict,
    },
}

impl RelationPayload {
    pub fn task(&self) -> TaskKind {
        use RelationPayload::*;
        match self {
            HandChange { .. } | DirectionChange { .. } | SameSide { .. } => TaskKind::RelativeDirection,
            DistanceTrend { .. } | CloserThan { .. } => TaskKind::RelativeDistance,
            ItemLocation { .. } | ItemDelivery { .. } => TaskKind::FindMyItem,
            NextObject { .. } => TaskKind::FurnitureAffordance,
            NextStep { .. } => TaskKind::ActionPlanning,
        }
    }

    pub fn kind(&self) -> &'static str {
        use RelationPayload::*;
        match self {
            HandChange { .. } => "hand_change",
            DirectionChange { .. } => "direction_change",
            SameSide { .. } => "same_side",
            DistanceTrend { .. } => "distance_trend",
            CloserThan { .. } => "closer_than",
            ItemLocation { .. } => "item_location",
            ItemDelivery { .. } => "item_delivery",
            NextObject { .. } => "next_object",
            NextStep { .. } => "next_step",
        }
    }

    /// Stable name of the question template, e.g. `same_side.1`.
    pub fn question_template_id(&self) -> String {
        use RelationPayload::*;
        let q = match self {
            SameSide { question_template, .. }
            | DistanceTrend { question_template, .. }
            | CloserThan { question_template, .. }
            | ItemLocation { question_template, .. }
            | NextObject { question_template, .. } => *question_template,
            _ => 0,
        };
        format!("{}.{q}", self.kind())
    }

    /// Object ids the record is about, in payload order.
    pub fn object_ids(&self) -> Vec<ObjectId> {
        use RelationPayload::*;
        match self {
            HandChange { object, .. } | DirectionChange { object, .. } | DistanceTrend { object, .. } => vec![object.id],
            SameSide { objects, .. } | CloserThan { objects, .. } => objects.iter().map(|o| o.id).collect(),
            ItemLocation { object, support, .. } => vec![object.id, support.id],
            ItemDelivery { object, anchors, .. } => vec![object.id, anchors[0].id, anchors[1].id],
            NextObject { options, .. } => options.iter().map(|o| o.id).collect(),
            NextStep { .. } => Vec::new(),
        }
    }

    /// Action ids the payload names, in payload order.
    pub fn action_ids(&self) -> Vec<ActionId> {
        use RelationPayload::*;
        match self {
            HandChange { first_action, last_action, .. }
            | DirectionChange { first_action, last_action, .. }
            | DistanceTrend { first_action, last_action, .. } => vec![first_action.id, last_action.id],
            SameSide { action, .. } | CloserThan { action, .. } => vec![action.id],
            ItemLocation { placement, .. } | ItemDelivery { placement, .. } => vec![placement.id],
            NextObject { next_action, .. } => vec![next_action.id],
            NextStep { completed, next_action, .. } => {
                completed.iter().map(|a| a.id).chain([next_action.id]).collect()
            }
        }
    }
}

fn relative_phrase(d: Direction) -> &'static str {
    match d {
        Direction::Front => "in front of the person",
        Direction::Back => "behind the person",
        Direction::Left => "to the left of the person",
        Direction::Right => "to the right of the person",
    }
}

fn their_phrase(d: Direction) -> &'static str {
    match d {
        Direction::Front => "in front of them",
        Direction::Back => "behind them",
        Direction::Left => "to their left",
        Direction::Right => "to their right",
    }
}

/// Movement instruction toward a destination in direction `d`.
pub fn instruction(d: Direction) -> &'static str {
    match d {
        Direction::Front => "move forward",
        Direction::Back => "turn around and move back",
        Direction::Left => "move left",
        Direction::Right => "move right",
    }
}

const STAY_INSTRUCTION: &str = "stay where you are";

fn side_word(h: Hand) -> &'static str {
    h.side().word()
}

fn quote(a: &Named) -> String {
    format!("'{}'", a.name)
}

fn option_list(options: &[Named]) -> String {
    let names: Vec<String> = options.iter().map(|o| format!("the {}", o.name)).collect();
    match names.as_slice() {
        [] => String::new(),
        [one] => one.clone(),
        [a, b] => format!("{a} or {b}"),
        [rest @ .., last] => format!("{}, or {last}", rest.join(", ")),
    }
}

fn template_error(kind: &'static str, index: u8) -> QaError {
    QaError::Template { kind, index }
}

pub const DIRECTION_QUESTION_TEMPLATES: u8 = 4;
pub const DISTANCE_QUESTION_TEMPLATES: u8 = 7;
pub const FIND_QUESTION_TEMPLATES: u8 = 3;
pub const AFFORDANCE_QUESTION_TEMPLATES: u8 = 3;
const CHANGE_ANSWER_TEMPLATES: u8 = 3;
const TREND_ANSWER_TEMPLATES: u8 = 3;

pub fn render_question(p: &RelationPayload) -> Result<String, QaError> {
    use RelationPayload::*;
    Ok(match p {
        HandChange { object, first_action, last_action, .. } => format!(
            "Does the hand closer to the {} differ when performing {} and {}?",
            object.name,
            quote(first_action),
            quote(last_action)
        ),
        DirectionChange { object, first_action, last_action, asked, .. } => format!(
            "Is the {} to the {} of the person when the person is performing {}, and {} when {}?",
            object.name,
            asked[0],
            quote(first_action),
            relative_phrase(asked[1]),
            quote(last_action)
        ),
        SameSide { objects, action, question_template, .. } => match question_template {
            0 => format!(
                "Are the {} and {} on the same side of the person when performing {}?",
                objects[0].name,
                objects[1].name,
                quote(action)
            ),
            1 => format!(
                "Is the person facing both the {} and {} from the same side when performing {}?",
                objects[0].name,
                objects[1].name,
                quote(action)
            ),
            &i => return Err(template_error("same_side", i)),
        },
        DistanceTrend { object, first_action, last_action, question_template, .. } => {
            let (o, a1, ak) = (&object.name, quote(first_action), quote(last_action));
            match question_template {
                0 => format!("Does the person move closer to the {o} between {a1} and {ak}?"),
                1 => format!("Does the person move away from the {o} between {a1} and {ak}?"),
                2 => format!("Does the person end up closer to the {o} after performing {ak}?"),
                3 => format!("Is the person closer to the {o} when {a1} or when {ak}?"),
                4 => format!("During which action is the person closest to the {o}?"),
                &i => return Err(template_error("distance_trend", i)),
            }
        }
        CloserThan { objects, action, question_template, .. } => {
            let (o1, o2, a) = (&objects[0].name, &objects[1].name, quote(action));
            match question_template {
                0 => format!("During {a}, is the person closer to the {o1} than to the {o2}?"),
                1 => format!("During {a}, would it be easier for the person to access the {o1} or the {o2}?"),
                &i => return Err(template_error("closer_than", i)),
            }
        }
        ItemLocation { object, placement, question_template, .. } => match question_template {
            0 => format!("Where is the {}, and how can the person get to it?", object.name),
            1 => format!(
                "After performing {}, where did the person leave the {}, and how can it be reached?",
                quote(placement),
                object.name
            ),
            &i => return Err(template_error("item_location", i)),
        },
        ItemDelivery { object, anchors, .. } => format!(
            "Would it be closer for the person to bring the {} to the {} or to the {}?",
            object.name, anchors[0].name, anchors[1].name
        ),
        NextObject { options, question_template, .. } => {
            let stem = match question_template {
                0 => "Considering the person's previous actions and current movement, which object will they most likely interact with next?",
                1 => "Which of the following objects does the person interact with next, given their previous actions and current motion?",
                2 => "Based on what the person has done so far and how they are moving now, which nearby object is the person preparing to interact with?",
                &i => return Err(template_error("next_object", i)),
            };
            format!("{stem} Options: {}.", option_list(options))
        }
        NextStep { completed, .. } => {
            let steps: Vec<&str> = completed.iter().map(|a| a.name.as_str()).collect();
            format!(
                "We are performing a cooking or assembly task with the following sequence of actions: {}. \
                 Based on the video, what should I do next, and how can I get to the place where the next step takes place?",
                steps.join(", ")
            )
        }
    })
}

pub fn render_answer(p: &RelationPayload) -> Result<String, QaError> {
    use RelationPayload::*;
    Ok(match p {
        HandChange { object, first_action, last_action, before, after, changed } => {
            let (o, a1, ak) = (&object.name, quote(first_action), quote(last_action));
            if *changed {
                format!(
                    "Yes, the hand closer to the {o} changes from the {} of the person to the {} of the person between {a1} and {ak}.",
                    side_word(*before),
                    side_word(*after)
                )
            } else {
                format!("No, the same hand remains closer to the {o} during both {a1} and {ak}.")
            }
        }
        DirectionChange { object, first_action, last_action, before, after, changed, answer_template, .. } => {
            let (o, a1, ak) = (&object.name, quote(first_action), quote(last_action));
            if *answer_template >= CHANGE_ANSWER_TEMPLATES {
                return Err(template_error("direction_change answer", *answer_template));
            }
            if !changed {
                format!("The {o} remains {} during both {a1} and {ak}.", relative_phrase(*before))
            } else {
                match answer_template {
                    0 => format!(
                        "Initially, the {o} is to the {before} of the person, but as the person moves, it is to the {after} of the person."
                    ),
                    1 => format!(
                        "At first, the {o} appears to the {before} of the person, but after performing {ak}, due to the person's movement, it appears to the {after} of the person."
                    ),
                    _ => format!(
                        "Relative to the person, the {o} changes from being to the {before} of the person to the {after} of the person between {a1} and {ak}."
                    ),
                }
            }
        }
        SameSide { objects, action, first, second, same, question_template } => {
            if *question_template > 1 {
                return Err(template_error("same_side", *question_template));
            }
            let (o1, o2, a) = (&objects[0].name, &objects[1].name, quote(action));
            if *same {
                format!("Yes, both the {o1} and {o2} are to the {first} of the person during {a}.")
            } else {
                format!("No, the {o1} is to the {first} of the person, while the {o2} is to the {second} of the person during {a}.")
            }
        }
        DistanceTrend { object, first_action, last_action, trend, answer_template, .. } => {
            let (o, a1, ak) = (&object.name, quote(first_action), quote(last_action));
            if *answer_template >= TREND_ANSWER_TEMPLATES {
                return Err(template_error("distance_trend answer", *answer_template));
            }
            match (trend, answer_template) {
                (TrendKind::Approaching, 0) => format!("The person moves closer to the {o} from {a1} to {ak}."),
                (TrendKind::Approaching, 1) => format!(
                    "The person starts off farther from the {o} at {a1}, but ends up closer to it after {ak}."
                ),
                (TrendKind::Approaching, _) => format!("The person approaches the {o} while moving from {a1} to {ak}."),
                (TrendKind::Receding, 0) => format!("The person moves further away from the {o} from {a1} to {ak}."),
                (TrendKind::Receding, 1) => format!(
                    "The person starts off closer to the {o} at {a1}, but ends up farther from it after {ak}."
                ),
                (TrendKind::Receding, _) => format!("The person moves away from the {o} while moving from {a1} to {ak}."),
                (TrendKind::Stationary, _) => {
                    format!("The person stays at about the same distance from the {o} from {a1} to {ak}.")
                }
            }
        }
        CloserThan { objects, action, verdict, .. } => {
            let (o1, o2, a) = (&objects[0].name, &objects[1].name, quote(action));
            match verdict {
                Closer::A => format!("Yes, the person is closer to the {o1} than to the {o2} when performing {a}."),
                Closer::B => format!("No, the person is closer to the {o2} than to the {o1} when performing {a}."),
                Closer::Tie => {
                    format!("The person is at a similar distance from both the {o1} and the {o2} when performing {a}.")
                }
            }
        }
        ItemLocation { object, support, direction, navigation, .. } => {
            let reach = match (navigation.moved, navigation.direction) {
                (true, Some(d)) => format!("To get to it, {}.", instruction(d)),
                _ => "It is within reach, so the person can stay where they are.".to_string(),
            };
            format!("The {} is {}, on the {}. {reach}", object.name, their_phrase(*direction), support.name)
        }
        ItemDelivery { object, anchors, verdict, .. } => match verdict {
            Closer::A => format!("It would be closer to bring the {} to the {}.", object.name, anchors[0].name),
            Closer::B => format!("It would be closer to bring the {} to the {}.", object.name, anchors[1].name),
            Closer::Tie => format!(
                "The {} and the {} are about equally close to the {}.",
                anchors[0].name, anchors[1].name, object.name
            ),
        },
        NextObject { options, answer, next_action, .. } => {
            let gt = options.get(*answer).ok_or(template_error("next_object answer", u8::MAX))?;
            format!(
                "The person will most likely interact with the {} next, to {}.",
                gt.name,
                quote(next_action)
            )
        }
        NextStep { completed, next_action, navigation } => {
            let done: Vec<String> = completed.iter().map(quote).collect();
            let go = match (navigation.moved, navigation.direction) {
                (true, Some(d)) => format!("To get to where it takes place, {}.", instruction(d)),
                _ => format!("It takes place right here, so {STAY_INSTRUCTION}."),
            };
            format!(
                "So far the person has done: {}. The next step is {}. {go}",
                done.join(", "),
                quote(next_action)
            )
        }
    })
}

/// Optional rewrite of rendered answers (e.g. an external paraphraser).
pub trait AnswerRefiner: Send + Sync {
    fn name(&self) -> &str;
    fn refine(&self, payload: &RelationPayload, answer: String) -> String;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityAnswers;

impl AnswerRefiner for IdentityAnswers {
    fn name(&self) -> &str {
        "identity"
    }

    fn refine(&self, _payload: &RelationPayload, answer: String) -> String {
        answer
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub seed: u64,
    pub record_seed: u64,
    pub attempt: usize,
    pub question_template: String,
    pub answer_refiner: String,
    pub thresholds: Thresholds,
    pub min_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QARecord {
    pub record_id: String,
    pub scene_id: String,
    pub task: TaskKind,
    pub clip: Clip,
    pub question: String,
    pub answer: String,
    pub query_objects: Vec<ObjectId>,
    pub query_actions: Vec<ActionId>,
    pub relation_payload: RelationPayload,
    pub provenance: Provenance,
}

/// Everything a task builder needs besides its own choices.
struct Ctx<'p, 'a> {
    prep: &'p PreparedScene<'a>,
    cfg: &'p GenConfig,
}

impl Ctx<'_, '_> {
    fn scene(&self) -> &SceneModel {
        self.prep.scene
    }

    fn position(&self, id: ObjectId, interaction: &ActionInterval) -> Result<Vec3, QaError> {
        self.prep.object_position(id, interaction, self.cfg.localize)
    }

    fn navigate(&self, from: &Pose, to: &Vec3) -> Result<NavigationVerdict, QaError> {
        let v = estimate_navigation(from, to, self.cfg.thresholds.navigation)?;
        Ok(IdentityRefiner.refine(v))
    }
}

/// Output of a task builder before ids and provenance are attached.
pub struct Draft {
    pub clip: Clip,
    pub payload: RelationPayload,
    /// Actions the question is about; superset of the payload's own.
    pub query_actions: Vec<ActionId>,
}

fn first_object(a: &ActionInterval) -> Result<ObjectId, QaError> {
    a.object_refs.first().copied().ok_or(QaError::NoEligiblePair)
}

fn pick_query_object<'s>(
    scene: &'s SceneModel,
    a1: &'s ActionInterval,
    ak: &'s ActionInterval,
    rng: &mut ChaCha8Rng,
) -> Result<(ObjectId, &'s ActionInterval), QaError> {
    let from = if rng.random_bool(0.5) { a1 } else { ak };
    let id = first_object(from)?;
    object(scene, id)?;
    Ok((id, from))
}

fn relative_direction_task(ctx: &Ctx, rng: &mut ChaCha8Rng) -> Result<Draft, QaError> {
    let scene = ctx.scene();
    let clip = sample_clip(scene, rng.random())?;
    let (a1, ak) = select_action_pair(scene, &clip, ctx.cfg.min_gap)?;
    let (a1, ak) = (action(scene, a1)?, action(scene, ak)?);
    let q = rng.random_range(0..DIRECTION_QUESTION_TEMPLATES);
    let payload = match q {
        0 | 1 => {
            let (id, interaction) = pick_query_object(scene, a1, ak, rng)?;
            let asked = [*Direction::ALL.choose(rng).expect("non-empty"), *Direction::ALL.choose(rng).expect("non-empty")];
            let answer_template = rng.random_range(0..CHANGE_ANSWER_TEMPLATES);
            if q == 0 {
                hand_change(ctx, a1, ak, id, interaction)?
            } else {
                direction_change_payload(ctx, a1, ak, id, interaction, asked, answer_template)?
            }
        }
        2 => {
            let mut pair = [(first_object(a1)?, a1), (first_object(ak)?, ak)];
            pair.shuffle(rng);
            same_side_payload(ctx, a1, pair, 0)?
        }
        _ => {
            let furniture: Vec<&SceneObject> = scene.furniture().collect();
            if furniture.len() < 2 {
                return Err(QaError::TooFewFurniture(2));
            }
            let picks: Vec<&&SceneObject> = furniture.choose_multiple(rng, 2).collect();
            let pair = [(picks[0].object_id, ak), (picks[1].object_id, ak)];
            same_side_payload(ctx, ak, pair, 1)?
        }
    };
    Ok(Draft {
        clip,
        payload,
        query_actions: vec![a1.action_id, ak.action_id],
    })
}

fn hand_change(
    ctx: &Ctx,
    a1: &ActionInterval,
    ak: &ActionInterval,
    id: ObjectId,
    interaction: &ActionInterval,
) -> Result<RelationPayload, QaError> {
    let pos = ctx.position(id, interaction)?;
    let before = hand_proximity(&ctx.prep.action_pose(a1)?, &pos)?;
    let after = hand_proximity(&ctx.prep.action_pose(ak)?, &pos)?;
    Ok(RelationPayload::HandChange {
        object: named_object(object(ctx.scene(), id)?),
        first_action: named_action(a1),
        last_action: named_action(ak),
        before,
        after,
        changed: before != after,
    })
}

fn direction_change_payload(
    ctx: &Ctx,
    a1: &ActionInterval,
    ak: &ActionInterval,
    id: ObjectId,
    interaction: &ActionInterval,
    asked: [Direction; 2],
    answer_template: u8,
) -> Result<RelationPayload, QaError> {
    let pos = ctx.position(id, interaction)?;
    let dc = direction_change(&ctx.prep.action_pose(a1)?, &ctx.prep.action_pose(ak)?, &pos)?;
    Ok(RelationPayload::DirectionChange {
        object: named_object(object(ctx.scene(), id)?),
        first_action: named_action(a1),
        last_action: named_action(ak),
        asked,
        before: dc.before,
        after: dc.after,
        changed: dc.changed,
        answer_template,
    })
}

fn same_side_payload(
    ctx: &Ctx,
    at: &ActionInterval,
    objects: [(ObjectId, &ActionInterval); 2],
    question_template: u8,
) -> Result<RelationPayload, QaError> {
    let p0 = ctx.position(objects[0].0, objects[0].1)?;
    let p1 = ctx.position(objects[1].0, objects[1].1)?;
    let s = same_side(&ctx.prep.action_pose(at)?, &p0, &p1)?;
    Ok(RelationPayload::SameSide {
        objects: [
            named_object(object(ctx.scene(), objects[0].0)?),
            named_object(object(ctx.scene(), objects[1].0)?),
        ],
        action: named_action(at),
        first: s.first,
        second: s.second,
        same: s.same,
        question_template,
    })
}

fn relative_distance_task(ctx: &Ctx, rng: &mut ChaCha8Rng) -> Result<Draft, QaError> {
    let scene = ctx.scene();
    let clip = sample_clip(scene, rng.random())?;
    let (a1, ak) = select_action_pair(scene, &clip, ctx.cfg.min_gap)?;
    let (a1, ak) = (action(scene, a1)?, action(scene, ak)?);
    let q = rng.random_range(0..DISTANCE_QUESTION_TEMPLATES);
    let payload = if q < 5 {
        let (id, interaction) = pick_query_object(scene, a1, ak, rng)?;
        let answer_template = rng.random_range(0..TREND_ANSWER_TEMPLATES);
        distance_trend_payload(ctx, a1, ak, id, interaction, q, answer_template)?
    } else {
        let mut pair = [(first_object(a1)?, a1), (first_object(ak)?, ak)];
        pair.shuffle(rng);
        closer_than_payload(ctx, a1, pair, q - 5)?
    };
    Ok(Draft {
        clip,
        payload,
        query_actions: vec![a1.action_id, ak.action_id],
    })
}

fn distance_trend_payload(
    ctx: &Ctx,
    a1: &ActionInterval,
    ak: &ActionInterval,
    id: ObjectId,
    interaction: &ActionInterval,
    question_template: u8,
    answer_template: u8,
) -> Result<RelationPayload, QaError> {
    let pos = ctx.position(id, interaction)?;
    let t = distance_trend(&ctx.prep.registered, &pos, (a1.start_time, ak.end_time), ctx.cfg.thresholds.slope)?;
    Ok(RelationPayload::DistanceTrend {
        object: named_object(object(ctx.scene(), id)?),
        first_action: named_action(a1),
        last_action: named_action(ak),
        trend: t.kind,
        slope: t.slope,
        distances: t.distances,
        question_template,
        answer_template,
    })
}

fn closer_than_payload(
    ctx: &Ctx,
    at: &ActionInterval,
    objects: [(ObjectId, &ActionInterval); 2],
    question_template: u8,
) -> Result<RelationPayload, QaError> {
    let p0 = ctx.position(objects[0].0, objects[0].1)?;
    let p1 = ctx.position(objects[1].0, objects[1].1)?;
    let c = closer_than(&ctx.prep.action_pose(at)?, &p0, &p1, ctx.cfg.thresholds.tie_margin);
    Ok(RelationPayload::CloserThan {
        objects: [
            named_object(object(ctx.scene(), objects[0].0)?),
            named_object(object(ctx.scene(), objects[1].0)?),
        ],
        action: named_action(at),
        verdict: c.verdict,
        distances: [c.distance_a, c.distance_b],
        question_template,
    })
}

/// Whether the action leaves an item somewhere.
pub fn is_placement(scene: &SceneModel, a: &ActionInterval) -> bool {
    PLACEMENT_VERBS.iter().any(|v| a.label.starts_with(&format!("{v} ")))
        && a
            .object_refs
            .first()
            .and_then(|&id| scene.object(id))
            .is_some_and(|o| !o.is_furniture)
}

fn find_my_item_task(ctx: &Ctx, rng: &mut ChaCha8Rng) -> Result<Draft, QaError> {
    let scene = ctx.scene();
    let clip = sample_clip(scene, rng.random())?;
    let placements: Vec<&ActionInterval> = clip
        .action_ids
        .iter()
        .map(|&id| action(scene, id))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .filter(|a| is_placement(scene, a))
        .collect();
    let placement = *placements.choose(rng).ok_or(QaError::NoPlacement)?;
    let q = rng.random_range(0..FIND_QUESTION_TEMPLATES);
    let payload = if q < 2 {
        item_location_payload(ctx, &clip, placement, q)?
    } else {
        let item = object(scene, first_object(placement)?)?;
        let others: Vec<&SceneObject> = scene.furniture().filter(|f| Some(f.object_id) != item.support).collect();
        if others.len() < 2 {
            return Err(QaError::TooFewFurniture(3));
        }
        let picks: Vec<&&SceneObject> = others.choose_multiple(rng, 2).collect();
        item_delivery_payload(ctx, placement, [picks[0].object_id, picks[1].object_id])?
    };
    Ok(Draft {
        clip,
        payload,
        query_actions: vec![placement.action_id],
    })
}

fn item_location_payload(ctx: &Ctx, clip: &Clip, placement: &ActionInterval, question_template: u8) -> Result<RelationPayload, QaError> {
    let scene = ctx.scene();
    let item = object(scene, first_object(placement)?)?;
    let support = object(scene, item.support.ok_or(QaError::UnknownObject(item.object_id))?)?;
    let pos = ctx.position(item.object_id, placement)?;
    let end_pose = ctx.prep.clip_end_pose(clip);
    let direction = relative_direction(&end_pose, &pos)?;
    let navigation = ctx.navigate(&end_pose, &pos)?;
    Ok(RelationPayload::ItemLocation {
        object: named_object(item),
        support: named_object(support),
        placement: named_action(placement),
        direction,
        navigation,
        question_template,
    })
}

fn item_delivery_payload(ctx: &Ctx, placement: &ActionInterval, anchors: [ObjectId; 2]) -> Result<RelationPayload, QaError> {
    let scene = ctx.scene();
    let item = object(scene, first_object(placement)?)?;
    let pos = ctx.position(item.object_id, placement)?;
    let (f0, f1) = (object(scene, anchors[0])?, object(scene, anchors[1])?);
    let c = closer_than(&Pose::from_translation(pos), &f0.position, &f1.position, ctx.cfg.thresholds.tie_margin);
    Ok(RelationPayload::ItemDelivery {
        object: named_object(item),
        placement: named_action(placement),
        anchors: [named_object(f0), named_object(f1)],
        verdict: c.verdict,
        distances: [c.distance_a, c.distance_b],
    })
}

/// First action starting at or after the clip end.
pub fn next_action<'s>(scene: &'s SceneModel, clip: &Clip) -> Result<&'s ActionInterval, QaError> {
    scene
        .actions
        .iter()
        .find(|a| a.start_time >= clip.end_time)
        .ok_or(QaError::NoNextAction)
}

/// Furniture an action happens at: the object itself or what it rests on.
pub fn action_furniture<'s>(scene: &'s SceneModel, a: &ActionInterval) -> Result<&'s SceneObject, QaError> {
    let o = object(scene, first_object(a)?)?;
    match o.support {
        Some(s) if !o.is_furniture => object(scene, s),
        _ => Ok(o),
    }
}

fn furniture_affordance_task(ctx: &Ctx, rng: &mut ChaCha8Rng) -> Result<Draft, QaError> {
    let scene = ctx.scene();
    let clip = sample_clip(scene, rng.random())?;
    let next = next_action(scene, &clip)?;
    let truth = action_furniture(scene, next)?;
    let end = *ctx.prep.clip_end_pose(&clip).translation();
    let mut others: Vec<&SceneObject> = scene.furniture().filter(|f| f.object_id != truth.object_id).collect();
    if others.is_empty() {
        return Err(QaError::TooFewFurniture(2));
    }
    others.sort_by(|a, b| {
        (a.position - end)
            .norm()
            .total_cmp(&(b.position - end).norm())
            .then(a.object_id.cmp(&b.object_id))
    });
    let extra = rng.random_range(1..=2).min(others.len());
    let mut options: Vec<Named> = std::iter::once(truth)
        .chain(others.into_iter().take(extra))
        .map(named_object)
        .collect();
    options.shuffle(rng);
    let answer = options.iter().position(|o| o.id == truth.object_id).expect("truth included");
    let question_template = rng.random_range(0..AFFORDANCE_QUESTION_TEMPLATES);
    Ok(Draft {
        payload: RelationPayload::NextObject {
            options,
            answer,
            next_action: named_action(next),
            question_template,
        },
        query_actions: vec![next.action_id],
        clip,
    })
}

fn action_planning_task(ctx: &Ctx, rng: &mut ChaCha8Rng) -> Result<Draft, QaError> {
    let scene = ctx.scene();
    let clip = sample_clip(scene, rng.random())?;
    let next = next_action(scene, &clip)?;
    let payload = next_step_payload(ctx, &clip, next)?;
    Ok(Draft {
        query_actions: payload.action_ids(),
        payload,
        clip,
    })
}

fn next_step_payload(ctx: &Ctx, clip: &Clip, next: &ActionInterval) -> Result<RelationPayload, QaError> {
    let scene = ctx.scene();
    let completed = clip
        .action_ids
        .iter()
        .map(|&id| action(scene, id).map(named_action))
        .collect::<Result<Vec<_>, _>>()?;
    let destination = *ctx.prep.action_pose(next)?.translation();
    let navigation = ctx.navigate(&ctx.prep.clip_end_pose(clip), &destination)?;
    Ok(RelationPayload::NextStep {
        completed,
        next_action: named_action(next),
        navigation,
    })
}

/// Generates one record for `task` from `prep`, or explains why the scene
/// (under this seed) is not eligible.
pub fn generate_qa(prep: &PreparedScene, task: TaskKind, seed: u64, cfg: &GenConfig) -> Result<QARecord, QaError> {
    generate_qa_with(prep, task, seed, cfg, &IdentityAnswers)
}

pub fn generate_qa_with(
    prep: &PreparedScene,
    task: TaskKind,
    seed: u64,
    cfg: &GenConfig,
    refiner: &dyn AnswerRefiner,
) -> Result<QARecord, QaError> {
    let ctx = Ctx { prep, cfg };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draft = match task {
        TaskKind::RelativeDirection => relative_direction_task(&ctx, &mut rng),
        TaskKind::RelativeDistance => relative_distance_task(&ctx, &mut rng),
        TaskKind::FindMyItem => find_my_item_task(&ctx, &mut rng),
        TaskKind::FurnitureAffordance => furniture_affordance_task(&ctx, &mut rng),
        TaskKind::ActionPlanning => action_planning_task(&ctx, &mut rng),
    }?;
    finish(prep.scene, draft, seed, cfg, refiner)
}

fn finish(scene: &SceneModel, draft: Draft, seed: u64, cfg: &GenConfig, refiner: &dyn AnswerRefiner) -> Result<QARecord, QaError> {
    let Draft { clip, payload, query_actions } = draft;
    let question = render_question(&payload)?;
    let answer = refiner.refine(&payload, render_answer(&payload)?);
    Ok(QARecord {
        record_id: format!("{}-{}-{seed:016x}", scene.scene_id, payload.task()),
        scene_id: scene.scene_id.clone(),
        task: payload.task(),
        clip,
        question,
        answer,
        query_objects: payload.object_ids(),
        query_actions,
        provenance: Provenance {
            seed,
            record_seed: seed,
            attempt: 0,
            question_template: payload.question_template_id(),
            answer_refiner: refiner.name().to_string(),
            thresholds: cfg.thresholds,
            min_gap: cfg.min_gap,
        },
        relation_payload: payload,
    })
}

/// Seed of attempt `attempt` for record `index`.
pub fn record_seed(seed: u64, index: usize, attempt: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng.set_word_pos(2 * attempt as u128);
    rng.random()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shortfall {
    pub task: TaskKind,
    pub requested: usize,
    pub produced: usize,
    /// Most frequent failure reason for this task.
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<QARecord>,
    pub requested: [usize; 5],
    pub shortfalls: Vec<Shortfall>,
}

impl Dataset {
    pub fn is_complete(&self) -> bool {
        self.shortfalls.is_empty()
    }
}

/// Generates `n` records with per-task counts from `mix`. Scene `i % len`
/// is tried first for record `i`; retries rotate through the scenes.
pub fn generate_dataset(
    scenes: &[SceneModel],
    n: usize,
    mix: &TaskMix,
    seed: u64,
    cfg: &GenConfig,
) -> Result<Dataset, QaError> {
    generate_dataset_with(scenes, n, mix, seed, cfg, &IdentityAnswers)
}

pub fn generate_dataset_with(
    scenes: &[SceneModel],
    n: usize,
    mix: &TaskMix,
    seed: u64,
    cfg: &GenConfig,
    refiner: &dyn AnswerRefiner,
) -> Result<Dataset, QaError> {
    if scenes.is_empty() {
        return Err(QaError::SceneTooShort);
    }
    let prepared: Vec<PreparedScene> = scenes.par_iter().map(PreparedScene::new).collect::<Result<_, _>>()?;
    let requested = mix.allocate(n);
    let mut tasks: Vec<TaskKind> = TaskKind::ALL
        .iter()
        .zip(requested)
        .flat_map(|(&t, c)| std::iter::repeat_n(t, c))
        .collect();
    tasks.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let outcomes: Vec<Result<QARecord, QaError>> = tasks
        .par_iter()
        .enumerate()
        .map(|(index, &task)| {
            let mut last = QaError::SceneTooShort;
            for attempt in 0..cfg.max_attempts {
                let prep = &prepared[(index + attempt) % prepared.len()];
                let rs = record_seed(seed, index, attempt);
                match generate_qa_with(prep, task, rs, cfg, refiner) {
                    Ok(mut r) => {
                        r.record_id = format!("rea-{index:06}");
                        r.provenance.seed = seed;
                        r.provenance.attempt = attempt;
                        return Ok(r);
                    }
                    Err(e) => last = e,
                }
            }
            Err(last)
        })
        .collect();

    let mut records = Vec::with_capacity(n);
    let mut produced = [0usize; 5];
    let mut reasons: [BTreeMap<String, usize>; 5] = Default::default();
    for (task, outcome) in tasks.iter().zip(outcomes) {
        match outcome {
            Ok(r) => {
                produced[task.index()] += 1;
                records.push(r);
            }
            Err(e) => *reasons[task.index()].entry(e.to_string()).or_default() += 1,
        }
    }
    let shortfalls = TaskKind::ALL
        .iter()
        .enumerate()
        .filter(|&(i, _)| produced[i] < requested[i])
        .map(|(i, &task)| Shortfall {
            task,
            requested: requested[i],
            produced: produced[i],
            reason: reasons[i]
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map(|(r, _)| r.clone())
                .unwrap_or_default(),
        })
        .collect();
    Ok(Dataset {
        records,
        requested,
        shortfalls,
    })
}

/// One JSON object per line.
pub fn to_jsonl(records: &[QARecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RecordCheck {
    /// Record id, or `line N` when the line did not parse.
    pub record: String,
    pub reasons: Vec<String>,
}

impl RecordCheck {
    pub fn passed(&self) -> bool {
        self.reasons.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<RecordCheck>,
}

impl ValidationReport {
    pub fn passed(&self) -> usize {
        self.checks.iter().filter(|c| c.passed()).count()
    }

    pub fn failed(&self) -> usize {
        self.checks.len() - self.passed()
    }

    pub fn all_passed(&self) -> bool {
        self.failed() == 0
    }
}

fn internal_consistency(p: &RelationPayload, prov: &Provenance, reasons: &mut Vec<String>) {
    use RelationPayload::*;
    let th = prov.thresholds;
    let mut check = |ok: bool, msg: &str| {
        if !ok {
            reasons.push(msg.to_string());
        }
    };
    let nav_ok = |n: &NavigationVerdict| n.moved == (n.displacement > th.navigation) && n.moved == n.direction.is_some();
    let closer_ok = |v: Closer, d: &[f64; 2]| {
        let expected = if (d[0] - d[1]).abs() <= th.tie_margin {
            Closer::Tie
        } else if d[0] < d[1] {
            Closer::A
        } else {
            Closer::B
        };
        v == expected
    };
    match p {
        HandChange { before, after, changed, .. } => check(*changed == (before != after), "changed flag disagrees"),
        DirectionChange { before, after, changed, .. } => check(*changed == (before != after), "changed flag disagrees"),
        SameSide { first, second, same, .. } => check(*same == (first == second), "same flag disagrees"),
        DistanceTrend { trend, slope, distances, .. } => {
            let refit = crate::relations::trend_from_distances(*distances, th.slope);
            check(refit.kind == *trend, "trend disagrees with distances");
            check((refit.slope - slope).abs() <= 1e-9, "slope disagrees with distances");
        }
        CloserThan { verdict, distances, .. } | ItemDelivery { verdict, distances, .. } => {
            check(closer_ok(*verdict, distances), "verdict disagrees with distances")
        }
        ItemLocation { direction, navigation, .. } => {
            check(nav_ok(navigation), "navigation verdict inconsistent");
            check(navigation.direction.is_none_or(|d| d == *direction), "navigation direction disagrees");
        }
        NextObject { options, answer, .. } => {
            check(*answer < options.len(), "answer index out of range");
            let ids: BTreeSet<u32> = options.iter().map(|o| o.id).collect();
            check(ids.len() == options.len(), "duplicate options");
            check((2..=3).contains(&options.len()), "expected 2 or 3 options");
        }
        NextStep { navigation, completed, .. } => {
            check(nav_ok(navigation), "navigation verdict inconsistent");
            check(!completed.is_empty(), "no completed actions");
        }
    }
}

fn check_record(r: &QARecord, refiner: &dyn AnswerRefiner, scenes: Option<&[SceneModel]>) -> Vec<String> {
    let mut reasons = Vec::new();
    if r.record_id.is_empty() {
        reasons.push("empty record_id".into());
    }
    if r.question.trim().is_empty() {
        reasons.push("empty question".into());
    }
    if r.answer.trim().is_empty() {
        reasons.push("empty answer".into());
    }
    if r.task != r.relation_payload.task() {
        reasons.push(format!("task {} does not match payload {}", r.task, r.relation_payload.kind()));
    }
    let d = r.clip.duration();
    if !(MIN_CLIP_SECONDS - 1e-9..=MAX_CLIP_SECONDS + 1e-9).contains(&d) {
        reasons.push(format!("clip lasts {d:.3} s"));
    }
    if r.clip.action_ids.len() < 2 {
        reasons.push("clip holds fewer than 2 actions".into());
    }
    match render_question(&r.relation_payload) {
        Ok(q) if q == r.question => {}
        Ok(_) => reasons.push("question does not match payload".into()),
        Err(e) => reasons.push(e.to_string()),
    }
    match render_answer(&r.relation_payload) {
        Ok(a) => {
            if refiner.refine(&r.relation_payload, a) != r.answer {
                reasons.push("answer does not match payload".into());
            }
        }
        Err(e) => reasons.push(e.to_string()),
    }
    if r.provenance.answer_refiner != refiner.name() {
        reasons.push(format!("answer refiner '{}' not available", r.provenance.answer_refiner));
    }
    if r.provenance.question_template != r.relation_payload.question_template_id() {
        reasons.push("question template id does not match payload".into());
    }
    if r.query_objects != r.relation_payload.object_ids() {
        reasons.push("query_objects do not match payload".into());
    }
    let payload_actions = r.relation_payload.action_ids();
    if !payload_actions.iter().all(|a| r.query_actions.contains(a)) {
        reasons.push("query_actions miss payload actions".into());
    }
    internal_consistency(&r.relation_payload, &r.provenance, &mut reasons);
    if let Some(scenes) = scenes {
        match scenes.iter().find(|s| s.scene_id == r.scene_id) {
            None => reasons.push(format!("unknown scene {}", r.scene_id)),
            Some(s) => {
                let actions = r.query_actions.iter().chain(&r.clip.action_ids).chain(&payload_actions);
                for a in actions.collect::<BTreeSet<_>>() {
                    if s.action(*a).is_none() {
                        reasons.push(format!("unknown action {a}"));
                    }
                }
                for o in &r.query_objects {
                    if s.object(*o).is_none() {
                        reasons.push(format!("unknown object {o}"));
                    }
                }
            }
        }
    }
    reasons
}

/// Checks every record invariant. Pass `scenes` to also check that
/// referenced ids exist.
pub fn validate_dataset(records: &[QARecord], scenes: Option<&[SceneModel]>) -> ValidationReport {
    validate_dataset_with(records, scenes, &IdentityAnswers)
}

pub fn validate_dataset_with(records: &[QARecord], scenes: Option<&[SceneModel]>, refiner: &dyn AnswerRefiner) -> ValidationReport {
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    for r in records {
        *seen.entry(r.record_id.as_str()).or_default() += 1;
    }
    let checks = records
        .iter()
        .map(|r| {
            let mut reasons = check_record(r, refiner, scenes);
            if seen[r.record_id.as_str()] > 1 {
                reasons.push("duplicate record_id".into());
            }
            RecordCheck {
                record: r.record_id.clone(),
                reasons,
            }
        })
        .collect();
    ValidationReport { checks }
}

/// Parses JSON Lines and validates. Lines that fail to parse are reported
/// as `line N` with the parse error.
pub fn validate_jsonl(text: &str, scenes: Option<&[SceneModel]>) -> (Vec<QARecord>, ValidationReport) {
    let mut records = Vec::new();
    let mut parse_failures = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<QARecord>(line) {
            Ok(r) => records.push(r),
            Err(e) => parse_failures.push(RecordCheck {
                record: format!("line {}", i + 1),
                reasons: vec![format!("unparseable record: {e}")],
            }),
        }
    }
    let mut report = validate_dataset(&records, scenes);
    report.checks.extend(parse_failures);
    (records, report)
}

#[cfg(test)]
mod tests;
