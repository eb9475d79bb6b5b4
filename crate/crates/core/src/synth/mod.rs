//! Synthetic kitchens: furniture along the walls of a box room, small items
//! on the counter tops, a sampled surface cloud and an agent walking between
//! furniture to perform short actions. Everything is a pure function of the
//! config, including the seed.

pub mod oracle;

use std::f64::consts::{PI, TAU};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::{Mask2D, PointCloud};
use crate::geom::{Intrinsics, Pose, Vec3};
use crate::register::{pose_descriptor, FrameDatabase, FrameEntry, FrameId};
use crate::relations::TimedPose;
use crate::scene::{ActionInterval, MaskAnnotation, ObjectId, SceneModel, SceneObject};
use crate::select::{filter_frames, select_representatives, DEFAULT_REPRESENTATIVES};

pub const WALL_HEIGHT: f64 = 2.5;
pub const FURNITURE_HEIGHT: f64 = 0.9;
pub const FURNITURE_DEPTH: f64 = 0.6;
pub const CAMERA_HEIGHT: f64 = 1.6;
/// Camera pitch below the horizon, radians.
pub const CAMERA_PITCH: f64 = 35.0 * PI / 180.0;
/// Distance from a furniture front face to where the agent stands.
pub const STAND_OFFSET: f64 = 0.45;
pub const TRACK_HZ: f64 = 10.0;

const CORNER_CLEARANCE: f64 = 0.7;
const SAME_WALL_GAP: f64 = 0.1;
const MIN_ANCHOR_SEPARATION: f64 = 0.5;
const PLACEMENT_ATTEMPTS: usize = 500;
const SWAY: f64 = 3.0 * PI / 180.0;
const TURN_TICKS: u32 = 8;
const STAY_PROBABILITY: f64 = 0.35;
const ITEM_ACTION_PROBABILITY: f64 = 0.6;
const FRAME_DB_SEED_SALT: u64 = 0x5eed_f4a3_e5db;

const FURNITURE_KINDS: [(&str, [&str; 2], [f64; 3]); 10] = [
    ("sink", ["turn on", "turn off"], [0.70, 0.72, 0.75]),
    ("hob", ["turn on", "turn off"], [0.15, 0.15, 0.15]),
    ("fridge", ["open", "close"], [0.92, 0.92, 0.90]),
    ("counter", ["wipe", "clear"], [0.55, 0.40, 0.25]),
    ("cupboard", ["open", "close"], [0.60, 0.45, 0.30]),
    ("oven", ["open", "close"], [0.25, 0.25, 0.28]),
    ("microwave", ["open", "close"], [0.80, 0.80, 0.82]),
    ("dishwasher", ["open", "load"], [0.75, 0.76, 0.78]),
    ("shelf", ["check", "tidy"], [0.45, 0.33, 0.20]),
    ("bin", ["open", "empty"], [0.30, 0.35, 0.30]),
];

const ITEM_NAMES: [&str; 20] = [
    "cup", "plate", "knife", "spoon", "pan", "bowl", "bottle", "sponge", "jar", "lid", "fork", "mug", "glass",
    "tray", "kettle", "pot", "board", "towel", "salt", "pepper",
];

const ITEM_VERBS: [&str; 6] = ["pick up", "put down", "rinse", "place", "wipe", "move"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("could not place furniture {index} after {attempts} attempts")]
    Placement { index: usize, attempts: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Defaults to `synth-<seed>`.
    pub scene_id: Option<String>,
    /// Room extents along x and y, meters.
    pub room: [f64; 2],
    pub furniture: usize,
    pub items_per_furniture: usize,
    pub actions: usize,
    /// Meters per second.
    pub walk_speed: f64,
    pub seed: u64,
    /// Surface samples per square meter for room and furniture.
    pub point_density: f64,
    /// Surface samples per square meter on items.
    pub item_density: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            scene_id: None,
            room: [6.0, 5.0],
            furniture: 5,
            items_per_furniture: 2,
            actions: 40,
            walk_speed: 0.8,
            seed: 0,
            point_density: 400.0,
            item_density: 2500.0,
        }
    }
}

impl SynthConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Config(m.to_string()));
        if !self.room.iter().all(|&e| e.is_finite() && e >= 3.0) {
            return bad("room extents must be at least 3 m");
        }
        if self.furniture == 0 || self.furniture > FURNITURE_KINDS.len() {
            return bad("furniture count must be in 1..=10");
        }
        if self.furniture * self.items_per_furniture > ITEM_NAMES.len() {
            return bad("at most 20 items in total");
        }
        if self.actions == 0 {
            return bad("action count must be positive");
        }
        for (name, v) in [
            ("walk_speed", self.walk_speed),
            ("point_density", self.point_density),
            ("item_density", self.item_density),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(SynthError::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    pub fn scene_id(&self) -> String {
        self.scene_id.clone().unwrap_or_else(|| format!("synth-{}", self.seed))
    }
}

/// The fixed camera of every synthetic scene.
pub fn default_intrinsics() -> Intrinsics {
    Intrinsics::new(260.0, 260.0, 160.0, 120.0, 320, 240).expect("valid constants")
}

/// Camera-to-world pose of a level-headed camera at `position`, heading
/// `yaw` (radians from +x toward +y) and pitched down by `pitch`.
pub fn egocentric_pose(position: Vec3, yaw: f64, pitch: f64) -> Pose {
    let forward = Vec3::new(yaw.cos() * pitch.cos(), yaw.sin() * pitch.cos(), -pitch.sin());
    let right = Vec3::new(yaw.sin(), -yaw.cos(), 0.0);
    let down = forward.cross(&right);
    let rotation = nalgebra::Matrix3::from_columns(&[right, down, forward]);
    Pose::new(rotation, position).expect("orthonormal by construction")
}

#[derive(Debug, Clone, Copy)]
struct Wall {
    origin: Vec3,
    along: Vec3,
    inward: Vec3,
    length: f64,
}

fn walls(room: [f64; 2]) -> [Wall; 4] {
    let [w, d] = room;
    [
        Wall { origin: Vec3::zeros(), along: Vec3::x(), inward: Vec3::y(), length: w },
        Wall { origin: Vec3::new(w, 0.0, 0.0), along: Vec3::y(), inward: -Vec3::x(), length: d },
        Wall { origin: Vec3::new(0.0, d, 0.0), along: Vec3::x(), inward: -Vec3::y(), length: w },
        Wall { origin: Vec3::zeros(), along: Vec3::y(), inward: Vec3::x(), length: d },
    ]
}

#[derive(Debug, Clone)]
struct Furniture {
    wall: usize,
    along: f64,
    width: f64,
    kind: usize,
}

impl Furniture {
    fn wall_point(&self, ws: &[Wall; 4]) -> Vec3 {
        let w = ws[self.wall];
        w.origin + w.along * self.along
    }

    fn anchor(&self, ws: &[Wall; 4]) -> Vec3 {
        let c = self.wall_point(ws) + ws[self.wall].inward * (FURNITURE_DEPTH / 2.0);
        Vec3::new(c.x, c.y, FURNITURE_HEIGHT)
    }

    fn stand(&self, ws: &[Wall; 4]) -> Vec3 {
        let p = self.wall_point(ws) + ws[self.wall].inward * (FURNITURE_DEPTH + STAND_OFFSET);
        Vec3::new(p.x, p.y, CAMERA_HEIGHT)
    }

    fn facing_yaw(&self, ws: &[Wall; 4]) -> f64 {
        let n = -ws[self.wall].inward;
        n.y.atan2(n.x)
    }

    /// Footprint as an axis-aligned rectangle `[min, max]` in the floor plane.
    fn footprint(&self, ws: &[Wall; 4]) -> ([f64; 2], [f64; 2]) {
        let w = ws[self.wall];
        let c = self.wall_point(ws);
        let a = c - w.along * (self.width / 2.0);
        let b = c + w.along * (self.width / 2.0) + w.inward * FURNITURE_DEPTH;
        ([a.x.min(b.x), a.y.min(b.y)], [a.x.max(b.x), a.y.max(b.y)])
    }
}

fn in_rect(p: &Vec3, (lo, hi): ([f64; 2], [f64; 2])) -> bool {
    p.x >= lo[0] && p.x <= hi[0] && p.y >= lo[1] && p.y <= hi[1]
}

fn place_furniture(cfg: &SynthConfig, ws: &[Wall; 4], rng: &mut ChaCha8Rng) -> Result<Vec<Furniture>, SynthError> {
    let mut kinds: Vec<usize> = (0..FURNITURE_KINDS.len()).collect();
    kinds.shuffle(rng);
    let mut placed: Vec<Furniture> = Vec::with_capacity(cfg.furniture);
    for (index, &kind) in kinds.iter().take(cfg.furniture).enumerate() {
        let mut ok = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let wall = rng.random_range(0..4);
            let width = rng.random_range(0.6..=1.2);
            let lo = CORNER_CLEARANCE + width / 2.0;
            let hi = ws[wall].length - CORNER_CLEARANCE - width / 2.0;
            if hi < lo {
                continue;
            }
            let along = rng.random_range(lo..=hi);
            let f = Furniture { wall, along, width, kind };
            let clear = placed.iter().all(|g| {
                let apart = (f.anchor(ws) - g.anchor(ws)).norm() >= MIN_ANCHOR_SEPARATION;
                let gap = g.wall != f.wall || (f.along - g.along).abs() >= (f.width + g.width) / 2.0 + SAME_WALL_GAP;
                apart && gap
            });
            if clear {
                ok = Some(f);
                break;
            }
        }
        placed.push(ok.ok_or(SynthError::Placement {
            index,
            attempts: PLACEMENT_ATTEMPTS,
        })?);
    }
    Ok(placed)
}

struct Item {
    furniture: usize,
    name: &'static str,
    center: Vec3,
    radius: f64,
    color: Vec3,
}

fn place_items(cfg: &SynthConfig, ws: &[Wall; 4], furniture: &[Furniture], rng: &mut ChaCha8Rng) -> Vec<Item> {
    let mut names: Vec<usize> = (0..ITEM_NAMES.len()).collect();
    names.shuffle(rng);
    let mut names = names.into_iter();
    let n = cfg.items_per_furniture;
    let mut items = Vec::new();
    for (fi, f) in furniture.iter().enumerate() {
        let spread = (f.width / 6.0).min(0.15);
        for j in 0..n {
            let offset = if n == 1 {
                0.0
            } else {
                -spread + 2.0 * spread * j as f64 / (n - 1) as f64
            };
            let radius = rng.random_range(0.05..=0.07);
            let base = f.anchor(ws) + ws[f.wall].along * offset;
            let name = names.next().expect("validated item count");
            items.push(Item {
                furniture: fi,
                name: ITEM_NAMES[name],
                center: Vec3::new(base.x, base.y, FURNITURE_HEIGHT + radius),
                radius,
                color: Vec3::new(rng.random_range(0.2..1.0), rng.random_range(0.2..1.0), rng.random_range(0.2..1.0)),
            });
        }
    }
    items
}

struct CloudBuilder {
    points: Vec<Vec3>,
    colors: Vec<Vec3>,
    spacing: f64,
}

impl CloudBuilder {
    /// Jittered-grid samples of the rectangle `origin + a·u + b·v`,
    /// `a ∈ [0, len_u)`, `b ∈ [0, len_v)`.
    #[allow(clippy::too_many_arguments)]
    fn rect(
        &mut self,
        rng: &mut ChaCha8Rng,
        origin: Vec3,
        u: Vec3,
        len_u: f64,
        v: Vec3,
        len_v: f64,
        color: Vec3,
        keep: impl Fn(&Vec3) -> bool,
    ) {
        let h = self.spacing;
        let (nu, nv) = ((len_u / h).ceil() as usize, (len_v / h).ceil() as usize);
        for i in 0..nu {
            for j in 0..nv {
                let a = (i as f64 + rng.random::<f64>()) * h;
                let b = (j as f64 + rng.random::<f64>()) * h;
                if a >= len_u || b >= len_v {
                    continue;
                }
                let p = origin + u * a + v * b;
                if keep(&p) {
                    self.points.push(p);
                    self.colors.push(color);
                }
            }
        }
    }

    /// Fibonacci-lattice samples of a sphere surface.
    fn sphere(&mut self, center: Vec3, radius: f64, density: f64, color: Vec3) {
        let n = (4.0 * PI * radius * radius * density).ceil().max(8.0) as usize;
        let golden = PI * (3.0 - 5f64.sqrt());
        for i in 0..n {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            self.points.push(center + Vec3::new(r * phi.cos(), r * phi.sin(), z) * radius);
            self.colors.push(color);
        }
    }
}

fn build_cloud(cfg: &SynthConfig, ws: &[Wall; 4], furniture: &[Furniture], items: &[Item], rng: &mut ChaCha8Rng) -> PointCloud {
    let mut b = CloudBuilder {
        points: Vec::new(),
        colors: Vec::new(),
        spacing: 1.0 / cfg.point_density.sqrt(),
    };
    let footprints: Vec<_> = furniture.iter().map(|f| f.footprint(ws)).collect();
    let [w, d] = cfg.room;
    b.rect(rng, Vec3::zeros(), Vec3::x(), w, Vec3::y(), d, Vec3::new(0.5, 0.5, 0.5), |p| {
        !footprints.iter().any(|r| in_rect(p, *r))
    });
    for (wi, wall) in ws.iter().enumerate() {
        // Wall area hidden behind furniture is not observable.
        let hidden: Vec<(f64, f64)> = furniture
            .iter()
            .filter(|f| f.wall == wi)
            .map(|f| (f.along - f.width / 2.0, f.along + f.width / 2.0))
            .collect();
        let wall = *wall;
        b.rect(rng, wall.origin, wall.along, wall.length, Vec3::z(), WALL_HEIGHT, Vec3::new(0.85, 0.8, 0.7), |p| {
            let s = (p - wall.origin).dot(&wall.along);
            !(p.z < FURNITURE_HEIGHT && hidden.iter().any(|&(lo, hi)| s >= lo && s <= hi))
        });
    }
    for f in furniture {
        let wall = ws[f.wall];
        let color = Vec3::from(FURNITURE_KINDS[f.kind].2);
        let left = f.wall_point(ws) - wall.along * (f.width / 2.0);
        let top = left + Vec3::z() * FURNITURE_HEIGHT;
        b.rect(rng, top, wall.along, f.width, wall.inward, FURNITURE_DEPTH, color, |_| true);
        let front = left + wall.inward * FURNITURE_DEPTH;
        b.rect(rng, front, wall.along, f.width, Vec3::z(), FURNITURE_HEIGHT, color, |_| true);
        for side in [left, left + wall.along * f.width] {
            b.rect(rng, side, wall.inward, FURNITURE_DEPTH, Vec3::z(), FURNITURE_HEIGHT, color, |_| true);
        }
    }
    for item in items {
        b.sphere(item.center, item.radius, cfg.item_density, item.color);
    }
    PointCloud::new(b.points, b.colors).expect("finite samples")
}

/// One piece of the agent's timeline, in ticks of 1/TRACK_HZ seconds.
enum Segment {
    Still { at: Vec3, yaw: f64 },
    Act { at: Vec3, yaw: f64 },
    Turn { at: Vec3, from: f64, to: f64 },
    Walk { path: Vec<Vec3> },
}

struct Timeline {
    segments: Vec<(u32, u32, Segment)>,
    end: u32,
}

impl Timeline {
    fn push(&mut self, ticks: u32, seg: Segment) -> (u32, u32) {
        let span = (self.end, self.end + ticks);
        self.segments.push((span.0, span.1, seg));
        self.end = span.1;
        span
    }

    fn pose_at(&self, tick: u32) -> Pose {
        let idx = self
            .segments
            .iter()
            .position(|(s, e, _)| tick >= *s && tick < *e)
            .unwrap_or(self.segments.len() - 1);
        let (s, e, seg) = &self.segments[idx];
        let f = (tick - s) as f64 / (e - s) as f64;
        let f = f.min(1.0);
        let (at, yaw) = match seg {
            Segment::Still { at, yaw } => (*at, *yaw),
            Segment::Act { at, yaw } => (*at, yaw + SWAY * (TAU * f).sin()),
            Segment::Turn { at, from, to } => (*at, from + wrap_angle(to - from) * f),
            Segment::Walk { path } => walk_at(path, f),
        };
        egocentric_pose(at, yaw, CAMERA_PITCH)
    }
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a % TAU;
    if a > PI {
        a -= TAU;
    } else if a < -PI {
        a += TAU;
    }
    a
}

fn path_length(path: &[Vec3]) -> f64 {
    path.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

fn heading(a: &Vec3, b: &Vec3) -> f64 {
    (b.y - a.y).atan2(b.x - a.x)
}

/// Position and heading at fraction `f` of the path's arc length.
fn walk_at(path: &[Vec3], f: f64) -> (Vec3, f64) {
    let mut remaining = f * path_length(path);
    for w in path.windows(2) {
        let len = (w[1] - w[0]).norm();
        if remaining <= len && len > 0.0 {
            return (w[0] + (w[1] - w[0]) * (remaining / len), heading(&w[0], &w[1]));
        }
        remaining -= len;
    }
    let n = path.len();
    (path[n - 1], heading(&path[n - 2], &path[n - 1]))
}

fn label_for(object: &SceneObject, rng: &mut ChaCha8Rng) -> String {
    let verb = if object.is_furniture {
        let kind = FURNITURE_KINDS.iter().find(|k| k.0 == object.name).expect("known kind");
        kind.1[rng.random_range(0..2)]
    } else {
        ITEM_VERBS[rng.random_range(0..ITEM_VERBS.len())]
    };
    format!("{verb} {}", object.name)
}

/// Per-pixel silhouette of a sphere seen from `pose`.
pub fn sphere_mask(intr: &Intrinsics, pose: &Pose, center: &Vec3, radius: f64) -> Mask2D {
    let oc = pose.translation() - center;
    let c = oc.norm_squared() - radius * radius;
    Mask2D::from_fn(intr.width(), intr.height(), |u, v| {
        let d = pose.rotation() * intr.pixel_ray(u as f64, v as f64);
        let b = d.dot(&oc);
        let disc = b * b - c;
        disc >= 0.0 && -b + disc.sqrt() > 0.0
    })
}

/// Builds a complete synthetic scene.
pub fn generate_scene(cfg: &SynthConfig) -> Result<SceneModel, SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ws = walls(cfg.room);
    let furniture = place_furniture(cfg, &ws, &mut rng)?;
    let items = place_items(cfg, &ws, &furniture, &mut rng);
    let point_cloud = build_cloud(cfg, &ws, &furniture, &items, &mut rng);

    let mut objects: Vec<SceneObject> = furniture
        .iter()
        .enumerate()
        .map(|(i, f)| SceneObject {
            object_id: i as ObjectId,
            name: FURNITURE_KINDS[f.kind].0.to_string(),
            position: f.anchor(&ws),
            is_furniture: true,
            support: None,
        })
        .collect();
    let item_base = objects.len() as ObjectId;
    objects.extend(items.iter().enumerate().map(|(i, it)| SceneObject {
        object_id: item_base + i as ObjectId,
        name: it.name.to_string(),
        position: it.center,
        is_furniture: false,
        support: Some(it.furniture as ObjectId),
    }));

    let center = Vec3::new(cfg.room[0] / 2.0, cfg.room[1] / 2.0, CAMERA_HEIGHT);
    let mut timeline = Timeline { segments: Vec::new(), end: 0 };
    let mut here = rng.random_range(0..furniture.len());
    timeline.push(10, Segment::Still { at: furniture[here].stand(&ws), yaw: furniture[here].facing_yaw(&ws) });
    let mut actions = Vec::with_capacity(cfg.actions);
    for k in 0..cfg.actions {
        let stay = furniture.len() == 1 || (k > 0 && rng.random_bool(STAY_PROBABILITY));
        let target = if stay {
            here
        } else {
            let others: Vec<usize> = (0..furniture.len()).filter(|&i| i != here).collect();
            others[rng.random_range(0..others.len())]
        };
        let (from, to) = (&furniture[here], &furniture[target]);
        if target == here {
            let ticks = rng.random_range(5..=15);
            timeline.push(ticks, Segment::Still { at: to.stand(&ws), yaw: to.facing_yaw(&ws) });
        } else {
            let mut path = vec![from.stand(&ws)];
            if from.wall != to.wall {
                path.push(center);
            }
            path.push(to.stand(&ws));
            let ticks = ((path_length(&path) / cfg.walk_speed) * TRACK_HZ).ceil().max(1.0) as u32;
            let depart = heading(&path[0], &path[1]);
            let arrive = heading(&path[path.len() - 2], &path[path.len() - 1]);
            timeline.push(TURN_TICKS, Segment::Turn { at: path[0], from: from.facing_yaw(&ws), to: depart });
            timeline.push(ticks, Segment::Walk { path: path.clone() });
            timeline.push(TURN_TICKS, Segment::Turn { at: to.stand(&ws), from: arrive, to: to.facing_yaw(&ws) });
        }
        here = target;
        let own_items: Vec<usize> = (0..items.len()).filter(|&i| items[i].furniture == target).collect();
        let object = if !own_items.is_empty() && rng.random_bool(ITEM_ACTION_PROBABILITY) {
            &objects[item_base as usize + own_items[rng.random_range(0..own_items.len())]]
        } else {
            &objects[target]
        };
        let ticks = rng.random_range(30..=50);
        let (s, e) = timeline.push(ticks, Segment::Act { at: to.stand(&ws), yaw: to.facing_yaw(&ws) });
        actions.push(ActionInterval {
            action_id: k as u32,
            label: label_for(object, &mut rng),
            start_time: s as f64 / TRACK_HZ,
            end_time: e as f64 / TRACK_HZ,
            object_refs: vec![object.object_id],
        });
    }
    timeline.push(10, Segment::Still { at: furniture[here].stand(&ws), yaw: furniture[here].facing_yaw(&ws) });
    let agent_track: Vec<TimedPose> = (0..=timeline.end)
        .map(|t| TimedPose {
            time: t as f64 / TRACK_HZ,
            pose: timeline.pose_at(t),
        })
        .collect();

    let mut scene = SceneModel {
        scene_id: cfg.scene_id(),
        intrinsics: default_intrinsics(),
        point_cloud,
        objects,
        agent_track,
        actions,
        frame_db: FrameDatabase::new(Vec::new()).expect("empty database is valid"),
        masks: Vec::new(),
    };
    scene.masks = interaction_masks(&scene, &items, item_base);
    scene.frame_db = build_frame_db(&scene, cfg.seed ^ FRAME_DB_SEED_SALT);
    Ok(scene)
}

fn interaction_masks(scene: &SceneModel, items: &[Item], item_base: ObjectId) -> Vec<MaskAnnotation> {
    let mut masks: Vec<MaskAnnotation> = Vec::new();
    for a in &scene.actions {
        for &object_id in &a.object_refs {
            let Some(item) = object_id.checked_sub(item_base).and_then(|i| items.get(i as usize)) else {
                continue;
            };
            let Some(frame_index) = scene.median_frame(a.start_time, a.end_time) else {
                continue;
            };
            if masks.iter().any(|m| m.object_id == object_id && m.frame_index == frame_index) {
                continue;
            }
            let pose = scene.agent_track[frame_index].pose;
            let mask = sphere_mask(&scene.intrinsics, &pose, &item.center, item.radius);
            if !mask.is_empty() {
                masks.push(MaskAnnotation { object_id, frame_index, mask });
            }
        }
    }
    masks
}

/// Representative frames drawn from the frames recorded between actions
/// (during actions the hands are in view).
fn build_frame_db(scene: &SceneModel, seed: u64) -> FrameDatabase {
    let frames: Vec<(FrameId, Pose)> = scene
        .agent_track
        .iter()
        .enumerate()
        .map(|(i, t)| (i as FrameId, t.pose))
        .collect();
    let track = &scene.agent_track;
    let hands_free = |id: FrameId| {
        let t = track[id as usize].time;
        !scene.actions.iter().any(|a| t >= a.start_time && t <= a.end_time)
    };
    let mut kept = filter_frames(&frames, &hands_free);
    if kept.is_empty() {
        kept = frames;
    }
    let clusters = select_representatives(&kept, DEFAULT_REPRESENTATIVES, seed).expect("non-empty frames");
    let mut ids = clusters.representatives;
    ids.sort_unstable();
    let entries = ids
        .into_iter()
        .map(|id| {
            let pose = track[id as usize].pose;
            FrameEntry {
                frame_id: id,
                descriptor: pose_descriptor(&pose),
                pose,
            }
        })
        .collect();
    FrameDatabase::new(entries).expect("unique ids, equal descriptor lengths")
}
