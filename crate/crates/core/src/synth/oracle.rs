//! Independent re-derivation of relation payloads.
//!
//! Works from the ground-truth agent track instead of registered poses and
//! uses its own frame lookups, homogeneous transforms, quadrant tests and
//! closed-form trend slope. Choices that are not relations (templates,
//! asked directions, distractor order) are read from the record.

use serde_json::Value;

use crate::geom::{mean_pose, Pose, Vec3};
use crate::qagen::{Named, QARecord, RelationPayload};
use crate::relations::{Closer, Direction, Hand, NavigationVerdict, Thresholds, TrendKind};
use crate::scene::{ActionInterval, ObjectId, SceneModel};

type Mat4 = [[f64; 4]; 4];

fn homogeneous(p: &Pose) -> Mat4 {
    let (r, t) = (p.rotation(), p.translation());
    let mut m = [[0.0; 4]; 4];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = r[(i, j)];
        }
        m[i][3] = t[i];
    }
    m[3][3] = 1.0;
    m
}

/// Gauss-Jordan elimination with partial pivoting.
fn invert(m: &Mat4) -> Option<Mat4> {
    let mut a = *m;
    let mut inv = [[0.0; 4]; 4];
    for (i, row) in inv.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for col in 0..4 {
        let pivot = (col..4).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        inv.swap(col, pivot);
        let d = a[col][col];
        for j in 0..4 {
            a[col][j] /= d;
            inv[col][j] /= d;
        }
        for r in 0..4 {
            if r != col {
                let f = a[r][col];
                for j in 0..4 {
                    a[r][j] -= f * a[col][j];
                    inv[r][j] -= f * inv[col][j];
                }
            }
        }
    }
    Some(inv)
}

fn to_camera(pose: &Pose, p: &Vec3) -> [f64; 3] {
    let w = invert(&homogeneous(pose)).expect("rigid transforms are invertible");
    let h = [p.x, p.y, p.z, 1.0];
    let mut out = [0.0; 3];
    for (i, o) in out.iter_mut().enumerate() {
        *o = (0..4).map(|j| w[i][j] * h[j]).sum();
    }
    out
}

fn quadrant(pose: &Pose, p: &Vec3) -> Direction {
    let [x, _, z] = to_camera(pose, p);
    if z >= x.abs() {
        Direction::Front
    } else if x > 0.0 && -x <= z && z < x {
        Direction::Right
    } else if x < 0.0 && x <= z && z < -x {
        Direction::Left
    } else {
        Direction::Back
    }
}

fn hand(pose: &Pose, p: &Vec3) -> Hand {
    if to_camera(pose, p)[0] > 0.0 {
        Hand::RightHand
    } else {
        Hand::LeftHand
    }
}

fn dist(a: &Vec3, b: &Vec3) -> f64 {
    ((a.x - b.x).powi(2) + (a.y - b.y).powi(2) + (a.z - b.z).powi(2)).sqrt()
}

fn closer(d: [f64; 2], margin: f64) -> Closer {
    if (d[0] - d[1]).abs() <= margin {
        Closer::Tie
    } else if d[0] < d[1] {
        Closer::A
    } else {
        Closer::B
    }
}

fn navigation(from: &Pose, to: &Vec3, threshold: f64) -> NavigationVerdict {
    let displacement = dist(from.translation(), to);
    let moved = displacement > threshold;
    NavigationVerdict {
        moved,
        displacement,
        direction: moved.then(|| quadrant(from, to)),
    }
}

/// Ground truth read off the scene, one frame lookup at a time.
struct Truth<'a> {
    scene: &'a SceneModel,
}

impl Truth<'_> {
    fn frames(&self, start: f64, end: f64) -> Vec<usize> {
        let track = &self.scene.agent_track;
        (0..track.len())
            .filter(|&i| track[i].time >= start && track[i].time <= end)
            .collect()
    }

    fn nearest(&self, t: f64) -> usize {
        let mut best = 0;
        for (i, s) in self.scene.agent_track.iter().enumerate() {
            if (s.time - t).abs() < (self.scene.agent_track[best].time - t).abs() {
                best = i;
            }
        }
        best
    }

    fn pose(&self, i: usize) -> Pose {
        self.scene.agent_track[i].pose
    }

    fn action(&self, id: u32) -> Result<&ActionInterval, String> {
        self.scene
            .actions
            .iter()
            .find(|a| a.action_id == id)
            .ok_or_else(|| format!("no action {id}"))
    }

    fn action_pose(&self, a: &ActionInterval) -> Result<Pose, String> {
        let poses: Vec<Pose> = self.frames(a.start_time, a.end_time).into_iter().map(|i| self.pose(i)).collect();
        mean_pose(&poses).map_err(|e| e.to_string())
    }

    fn mean_position(&self, a: &ActionInterval) -> Result<Vec3, String> {
        let frames = self.frames(a.start_time, a.end_time);
        if frames.is_empty() {
            return Err(format!("no frames during action {}", a.action_id));
        }
        let sum = frames.iter().fold(Vec3::zeros(), |acc, &i| acc + self.pose(i).translation());
        Ok(sum / frames.len() as f64)
    }

    /// Annotated position for furniture, mask-projected cloud mean for items.
    fn position(&self, id: ObjectId, candidates: &[u32]) -> Result<Vec3, String> {
        let o = self
            .scene
            .objects
            .iter()
            .find(|o| o.object_id == id)
            .ok_or_else(|| format!("no object {id}"))?;
        if o.is_furniture {
            return Ok(o.position);
        }
        let interaction = candidates
            .iter()
            .map(|&a| self.action(a))
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .find(|a| a.object_refs.contains(&id))
            .ok_or_else(|| format!("object {id} has no interaction"))?;
        let frames = self.frames(interaction.start_time, interaction.end_time);
        let frame = *frames
            .get((frames.len().max(1) - 1) / 2)
            .ok_or("interaction has no frames")?;
        let mask = &self
            .scene
            .masks
            .iter()
            .find(|m| m.object_id == id && m.frame_index == frame)
            .ok_or_else(|| format!("no mask for {id} at {frame}"))?
            .mask;
        let intr = &self.scene.intrinsics;
        let pose = self.pose(frame);
        let inside: Vec<Vec3> = self
            .scene
            .point_cloud
            .points()
            .iter()
            .filter(|p| {
                let [x, y, z] = to_camera(&pose, p);
                if z <= 0.0 {
                    return false;
                }
                let u = intr.fx() * x / z + intr.cx();
                let v = intr.fy() * y / z + intr.cy();
                mask.contains(u.floor() as i64, v.floor() as i64)
            })
            .copied()
            .collect();
        if inside.is_empty() {
            return Err(format!("object {id} not visible"));
        }
        Ok(inside.iter().sum::<Vec3>() / inside.len() as f64)
    }

    fn furniture_of(&self, a: &ActionInterval) -> Result<ObjectId, String> {
        let id = *a.object_refs.first().ok_or("action touches nothing")?;
        let o = self.scene.objects.iter().find(|o| o.object_id == id).ok_or("unknown object")?;
        Ok(if o.is_furniture { id } else { o.support.ok_or("item without support")? })
    }
}

fn trend(d: [f64; 5], threshold: f64) -> (TrendKind, f64) {
    let slope = 0.4 * (2.0 * (d[4] - d[0]) + (d[3] - d[1]));
    let kind = if slope < -threshold {
        TrendKind::Approaching
    } else if slope > threshold {
        TrendKind::Receding
    } else {
        TrendKind::Stationary
    };
    (kind, slope)
}

/// Recomputes the payload of `record` from the scene's ground truth.
pub fn oracle_relations(scene: &SceneModel, record: &QARecord) -> Result<RelationPayload, String> {
    use RelationPayload::*;
    let truth = Truth { scene };
    let th: Thresholds = record.provenance.thresholds;
    let actions = record.relation_payload.action_ids();
    let clip_end = truth.pose(truth.nearest(record.clip.end_time));
    let mut p = record.relation_payload.clone();
    match &mut p {
        HandChange { object, first_action, last_action, before, after, changed } => {
            let pos = truth.position(object.id, &actions)?;
            *before = hand(&truth.action_pose(truth.action(first_action.id)?)?, &pos);
            *after = hand(&truth.action_pose(truth.action(last_action.id)?)?, &pos);
            *changed = before != after;
        }
        DirectionChange { object, first_action, last_action, before, after, changed, .. } => {
            let pos = truth.position(object.id, &actions)?;
            *before = quadrant(&truth.action_pose(truth.action(first_action.id)?)?, &pos);
            *after = quadrant(&truth.action_pose(truth.action(last_action.id)?)?, &pos);
            *changed = before != after;
        }
        SameSide { objects, action, first, second, same, .. } => {
            let pose = truth.action_pose(truth.action(action.id)?)?;
            let candidates = &record.query_actions;
            *first = quadrant(&pose, &truth.position(objects[0].id, candidates)?);
            *second = quadrant(&pose, &truth.position(objects[1].id, candidates)?);
            *same = first == second;
        }
        DistanceTrend { object, first_action, last_action, trend: kind, slope, distances, .. } => {
            let pos = truth.position(object.id, &actions)?;
            let (start, end) = (truth.action(first_action.id)?.start_time, truth.action(last_action.id)?.end_time);
            for (i, d) in distances.iter_mut().enumerate() {
                let t = start + (end - start) * i as f64 / 4.0;
                *d = dist(truth.pose(truth.nearest(t)).translation(), &pos);
            }
            (*kind, *slope) = trend(*distances, th.slope);
        }
        CloserThan { objects, action, verdict, distances, .. } => {
            let here = *truth.action_pose(truth.action(action.id)?)?.translation();
            let candidates = &record.query_actions;
            for (d, o) in distances.iter_mut().zip(objects.iter()) {
                *d = dist(&here, &truth.position(o.id, candidates)?);
            }
            *verdict = closer(*distances, th.tie_margin);
        }
        ItemLocation { object, support, placement, direction, navigation: nav, .. } => {
            let pos = truth.position(object.id, &[placement.id])?;
            *direction = quadrant(&clip_end, &pos);
            *nav = navigation(&clip_end, &pos, th.navigation);
            let item = scene.objects.iter().find(|o| o.object_id == object.id).ok_or("unknown item")?;
            support.id = item.support.ok_or("item without support")?;
        }
        ItemDelivery { object, placement, anchors, verdict, distances } => {
            let pos = truth.position(object.id, &[placement.id])?;
            for (d, a) in distances.iter_mut().zip(anchors.iter()) {
                *d = dist(&pos, &truth.position(a.id, &[])?);
            }
            *verdict = closer(*distances, th.tie_margin);
        }
        NextObject { options, answer, next_action, .. } => {
            let next = scene
                .actions
                .iter()
                .filter(|a| a.start_time >= record.clip.end_time)
                .min_by(|a, b| a.start_time.total_cmp(&b.start_time))
                .ok_or("no next action")?;
            next_action.id = next.action_id;
            let gt = truth.furniture_of(next)?;
            let here = *clip_end.translation();
            let mut others: Vec<(f64, ObjectId)> = scene
                .objects
                .iter()
                .filter(|o| o.is_furniture && o.object_id != gt)
                .map(|o| (dist(&o.position, &here), o.object_id))
                .collect();
            others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut expected: Vec<ObjectId> = others.iter().take(options.len().saturating_sub(1)).map(|o| o.1).collect();
            expected.push(gt);
            expected.sort_unstable();
            let mut offered: Vec<ObjectId> = options.iter().map(|o| o.id).collect();
            offered.sort_unstable();
            if offered != expected {
                *options = expected.iter().map(|&id| Named { id, name: String::new() }).collect();
            }
            *answer = options.iter().position(|o| o.id == gt).unwrap_or(usize::MAX);
        }
        NextStep { completed, next_action, navigation: nav } => {
            let inside: Vec<&ActionInterval> = scene
                .actions
                .iter()
                .filter(|a| a.start_time >= record.clip.start_time && a.end_time <= record.clip.end_time)
                .collect();
            *completed = inside.iter().map(|a| Named { id: a.action_id, name: a.label.clone() }).collect();
            let next = scene
                .actions
                .iter()
                .filter(|a| a.start_time >= record.clip.end_time)
                .min_by(|a, b| a.start_time.total_cmp(&b.start_time))
                .ok_or("no next action")?;
            next_action.id = next.action_id;
            *nav = navigation(&clip_end, &truth.mean_position(next)?, th.navigation);
        }
    }
    Ok(p)
}

/// Structural equality with numbers compared to within `tol`.
pub fn payloads_agree(a: &RelationPayload, b: &RelationPayload, tol: f64) -> bool {
    fn same(a: &Value, b: &Value, tol: f64) -> bool {
        match (a, b) {
            (Value::Number(x), Value::Number(y)) => match (x.as_f64(), y.as_f64()) {
                (Some(x), Some(y)) => (x - y).abs() <= tol,
                _ => x == y,
            },
            (Value::Array(x), Value::Array(y)) => x.len() == y.len() && x.iter().zip(y).all(|(x, y)| same(x, y, tol)),
            (Value::Object(x), Value::Object(y)) => {
                x.len() == y.len() && x.iter().all(|(k, v)| y.get(k).is_some_and(|w| same(v, w, tol)))
            }
            _ => a == b,
        }
    }
    match (serde_json::to_value(a), serde_json::to_value(b)) {
        (Ok(x), Ok(y)) => same(&x, &y, tol),
        _ => false,
    }
}

/// Oracle check of one record: `Ok` when the stored payload matches.
pub fn check_against_truth(scene: &SceneModel, record: &QARecord, tol: f64) -> Result<(), String> {
    let expected = oracle_relations(scene, record)?;
    if payloads_agree(&record.relation_payload, &expected, tol) {
        Ok(())
    } else {
        Err(format!(
            "stored {} differs from ground truth {}",
            serde_json::to_string(&record.relation_payload).unwrap_or_default(),
            serde_json::to_string(&expected).unwrap_or_default()
        ))
    }
}
