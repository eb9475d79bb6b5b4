//! Scene model: point cloud, annotated objects, the agent's pose track,
//! action intervals, the registration database and per-frame object masks.

use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::ply::{self, PlyError, PlyFormat, Precision};
use crate::cloud::{Mask2D, PointCloud};
use crate::geom::{Intrinsics, Pose, Vec3};
use crate::register::{FrameDatabase, FrameId, RelativePoseProvider};
use crate::relations::{nearest_index, TimedPose};

pub type ObjectId = u32;
pub type ActionId = u32;

/// Nominal action duration range in seconds.
pub const NOMINAL_ACTION_SECONDS: RangeInclusive<f64> = 3.0..=5.0;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("agent track is empty")]
    EmptyTrack,
    #[error("agent track timestamps not strictly increasing at index {0}")]
    TrackOrder(usize),
    #[error("duplicate object id {0}")]
    DuplicateObject(ObjectId),
    #[error("duplicate action id {0}")]
    DuplicateAction(ActionId),
    #[error("action {action} references unknown object {object}")]
    UnknownObject { action: ActionId, object: ObjectId },
    #[error("action {0} ends before it starts")]
    ActionOrder(ActionId),
    #[error("actions overlap or are out of order at action {0}")]
    ActionSequence(ActionId),
    #[error("database frame {0} is not on the agent track")]
    FrameOffTrack(FrameId),
    #[error("mask for object {object} at frame {frame}: {reason}")]
    BadMask { object: ObjectId, frame: usize, reason: String },
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("ply: {0}")]
    Ply(#[from] PlyError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub object_id: ObjectId,
    pub name: String,
    /// Anchor position in scene coordinates (top center for furniture,
    /// center for items).
    pub position: Vec3,
    pub is_furniture: bool,
    /// Furniture the item rests on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support: Option<ObjectId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionInterval {
    pub action_id: ActionId,
    pub label: String,
    pub start_time: f64,
    pub end_time: f64,
    pub object_refs: Vec<ObjectId>,
}

impl ActionInterval {
    pub fn duration(&self) -> f64 {
        self.end_time - self.start_time
    }

    pub fn is_nominal_duration(&self) -> bool {
        NOMINAL_ACTION_SECONDS.contains(&self.duration())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskAnnotation {
    pub object_id: ObjectId,
    /// Index into the agent track.
    pub frame_index: usize,
    pub mask: Mask2D,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneModel {
    pub scene_id: String,
    pub intrinsics: Intrinsics,
    pub point_cloud: PointCloud,
    pub objects: Vec<SceneObject>,
    pub agent_track: Vec<TimedPose>,
    pub actions: Vec<ActionInterval>,
    pub frame_db: FrameDatabase,
    pub masks: Vec<MaskAnnotation>,
}

impl SceneModel {
    /// Checks structural invariants. Returns non-fatal warnings (actions
    /// outside the nominal duration).
    pub fn validate(&self) -> Result<Vec<String>, SceneError> {
        if self.agent_track.is_empty() {
            return Err(SceneError::EmptyTrack);
        }
        for (i, w) in self.agent_track.windows(2).enumerate() {
            if !(w[1].time > w[0].time) {
                return Err(SceneError::TrackOrder(i + 1));
            }
        }
        let mut ids = BTreeSet::new();
        for o in &self.objects {
            if !ids.insert(o.object_id) {
                return Err(SceneError::DuplicateObject(o.object_id));
            }
        }
        let mut warnings = Vec::new();
        let mut action_ids = BTreeSet::new();
        let mut prev_end = f64::NEG_INFINITY;
        for a in &self.actions {
            if !action_ids.insert(a.action_id) {
                return Err(SceneError::DuplicateAction(a.action_id));
            }
            if !(a.end_time > a.start_time) {
                return Err(SceneError::ActionOrder(a.action_id));
            }
            if a.start_time < prev_end {
                return Err(SceneError::ActionSequence(a.action_id));
            }
            prev_end = a.end_time;
            if let Some(&object) = a.object_refs.iter().find(|r| !ids.contains(r)) {
                return Err(SceneError::UnknownObject { action: a.action_id, object });
            }
            if !a.is_nominal_duration() {
                warnings.push(format!("action {} lasts {:.2} s", a.action_id, a.duration()));
            }
        }
        for e in self.frame_db.entries() {
            let on_track = usize::try_from(e.frame_id)
                .ok()
                .and_then(|i| self.agent_track.get(i))
                .is_some_and(|t| t.pose == e.pose);
            if !on_track {
                return Err(SceneError::FrameOffTrack(e.frame_id));
            }
        }
        for m in &self.masks {
            let bad = |reason: &str| SceneError::BadMask {
                object: m.object_id,
                frame: m.frame_index,
                reason: reason.to_string(),
            };
            if m.frame_index >= self.agent_track.len() {
                return Err(bad("frame outside track"));
            }
            if !ids.contains(&m.object_id) {
                return Err(bad("unknown object"));
            }
            if m.mask.width() != self.intrinsics.width() || m.mask.height() != self.intrinsics.height() {
                return Err(bad("size differs from intrinsics"));
            }
        }
        Ok(warnings)
    }

    pub fn object(&self, id: ObjectId) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.object_id == id)
    }

    pub fn action(&self, id: ActionId) -> Option<&ActionInterval> {
        self.actions.iter().find(|a| a.action_id == id)
    }

    pub fn furniture(&self) -> impl Iterator<Item = &SceneObject> {
        self.objects.iter().filter(|o| o.is_furniture)
    }

    pub fn start_time(&self) -> f64 {
        self.agent_track.first().map_or(0.0, |t| t.time)
    }

    pub fn end_time(&self) -> f64 {
        self.agent_track.last().map_or(0.0, |t| t.time)
    }

    /// Track indices with timestamps inside `[start, end]`.
    pub fn frames_in(&self, start: f64, end: f64) -> RangeInclusive<usize> {
        let lo = self.agent_track.partition_point(|t| t.time < start);
        let hi = self.agent_track.partition_point(|t| t.time <= end);
        // An empty range when nothing falls inside.
        if hi == 0 {
            1..=0
        } else {
            lo..=hi - 1
        }
    }

    /// Median track frame of an interval, ties toward the earlier frame.
    pub fn median_frame(&self, start: f64, end: f64) -> Option<usize> {
        let r = self.frames_in(start, end);
        if r.is_empty() {
            None
        } else {
            Some(r.start() + (r.end() - r.start()) / 2)
        }
    }

    /// Track frame nearest to `t`, ties toward the earlier frame.
    pub fn nearest_frame(&self, t: f64) -> usize {
        nearest_index(&self.agent_track, t)
    }

    pub fn mask(&self, object: ObjectId, frame: usize) -> Option<&Mask2D> {
        self.masks
            .iter()
            .find(|m| m.object_id == object && m.frame_index == frame)
            .map(|m| &m.mask)
    }

    /// Relative poses read off the recorded agent track.
    pub fn track_provider(&self) -> TrackProvider<'_> {
        TrackProvider(&self.agent_track)
    }

    /// Writes `path` (JSON) and the cloud next to it with a `.ply` extension.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SceneError> {
        let path = path.as_ref();
        let cloud_path = cloud_path_for(path);
        ply::write_with(&self.point_cloud, &cloud_path, PlyFormat::BinaryLittleEndian, Precision::F64)?;
        let file = SceneFile {
            scene_id: self.scene_id.clone(),
            intrinsics: self.intrinsics,
            point_cloud: cloud_path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            objects: self.objects.clone(),
            agent_track: self.agent_track.clone(),
            actions: self.actions.clone(),
            frame_db: self.frame_db.clone(),
            masks: self.masks.clone(),
        };
        fs::write(path, serde_json::to_vec(&file)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SceneError> {
        let path = path.as_ref();
        let file: SceneFile = serde_json::from_slice(&fs::read(path)?)?;
        let cloud_path = path.parent().unwrap_or(Path::new("")).join(&file.point_cloud);
        let scene = SceneModel {
            scene_id: file.scene_id,
            intrinsics: file.intrinsics,
            point_cloud: ply::read(cloud_path)?,
            objects: file.objects,
            agent_track: file.agent_track,
            actions: file.actions,
            frame_db: file.frame_db,
            masks: file.masks,
        };
        scene.validate()?;
        Ok(scene)
    }
}

fn cloud_path_for(json: &Path) -> PathBuf {
    json.with_extension("ply")
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    scene_id: String,
    intrinsics: Intrinsics,
    /// File name of the cloud, relative to the JSON file.
    point_cloud: String,
    objects: Vec<SceneObject>,
    agent_track: Vec<TimedPose>,
    actions: Vec<ActionInterval>,
    frame_db: FrameDatabase,
    masks: Vec<MaskAnnotation>,
}

/// Relative poses computed from a recorded track indexed by frame id.
#[derive(Debug, Clone, Copy)]
pub struct TrackProvider<'a>(pub &'a [TimedPose]);

impl RelativePoseProvider for TrackProvider<'_> {
    fn relative_pose(&self, query: FrameId, reference: FrameId) -> Option<Pose> {
        let q = self.0.get(usize::try_from(query).ok()?)?;
        let r = self.0.get(usize::try_from(reference).ok()?)?;
        if query == reference {
            return Some(Pose::identity());
        }
        Some(r.pose.inverse().compose(&q.pose))
    }
}
