//! Frame-to-scene registration against a database of reference frames.
//!
//! A query frame is registered by retrieving its nearest reference frames
//! in descriptor space, chaining each reference pose with a relative pose
//! from a [`RelativePoseProvider`], and averaging the candidates.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{mean_pose, Pose};

pub type FrameId = u64;

/// Number of reference frames consulted per query.
pub const DEFAULT_NEIGHBORS: usize = 2;

#[derive(Debug, Error)]
pub enum RegisterError {
    #[error("duplicate frame id {0}")]
    DuplicateFrame(FrameId),
    #[error("descriptor length {got} does not match database length {expected}")]
    DescriptorLength { expected: usize, got: usize },
    #[error("frame database is empty")]
    EmptyDatabase,
    #[error("registration failed")]
    RegistrationFailed,
    #[error("database io: {0}")]
    Io(#[from] std::io::Error),
    #[error("database json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub frame_id: FrameId,
    pub descriptor: Vec<f64>,
    pub pose: Pose,
}

/// Reference frames with scene-frame poses. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DatabaseRepr", into = "DatabaseRepr")]
pub struct FrameDatabase {
    entries: Vec<FrameEntry>,
}

#[derive(Serialize, Deserialize)]
struct DatabaseRepr {
    entries: Vec<FrameEntry>,
}

impl From<FrameDatabase> for DatabaseRepr {
    fn from(db: FrameDatabase) -> Self {
        DatabaseRepr { entries: db.entries }
    }
}

impl TryFrom<DatabaseRepr> for FrameDatabase {
    type Error = RegisterError;
    fn try_from(r: DatabaseRepr) -> Result<Self, RegisterError> {
        FrameDatabase::new(r.entries)
    }
}

impl FrameDatabase {
    pub fn new(entries: Vec<FrameEntry>) -> Result<Self, RegisterError> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.frame_id) {
                return Err(RegisterError::DuplicateFrame(e.frame_id));
            }
        }
        if let Some(first) = entries.first() {
            let expected = first.descriptor.len();
            if let Some(bad) = entries.iter().find(|e| e.descriptor.len() != expected) {
                return Err(RegisterError::DescriptorLength {
                    expected,
                    got: bad.descriptor.len(),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[FrameEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn descriptor_len(&self) -> Option<usize> {
        self.entries.first().map(|e| e.descriptor.len())
    }

    pub fn get(&self, id: FrameId) -> Option<&FrameEntry> {
        self.entries.iter().find(|e| e.frame_id == id)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RegisterError> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RegisterError> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}

/// Pose-derived descriptor: translation followed by the rotation quaternion
/// `(w, i, j, k)` with `w ≥ 0`.
pub fn pose_descriptor(pose: &Pose) -> Vec<f64> {
    let q = pose.quaternion();
    let s = if q.w < 0.0 { -1.0 } else { 1.0 };
    let t = pose.translation();
    vec![t.x, t.y, t.z, s * q.w, s * q.i, s * q.j, s * q.k]
}

/// Relative pose source used during registration.
///
/// `relative_pose(query, reference)` returns the pose of the query camera
/// expressed in the reference camera's frame, so that
/// `reference_pose.compose(&relative)` is the query's scene pose.
/// Implementations must return the identity for `(a, a)` when defined.
pub trait RelativePoseProvider {
    fn relative_pose(&self, query: FrameId, reference: FrameId) -> Option<Pose>;
}

impl<F> RelativePoseProvider for F
where
    F: Fn(FrameId, FrameId) -> Option<Pose>,
{
    fn relative_pose(&self, query: FrameId, reference: FrameId) -> Option<Pose> {
        self(query, reference)
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// The `k` entries nearest to `query` by Euclidean distance, ties broken by
/// ascending frame id. `k` is clamped to the database size.
pub fn retrieve_neighbors(db: &FrameDatabase, query: &[f64], k: usize) -> Result<Vec<FrameId>, RegisterError> {
    let expected = db.descriptor_len().ok_or(RegisterError::EmptyDatabase)?;
    if query.len() != expected {
        return Err(RegisterError::DescriptorLength {
            expected,
            got: query.len(),
        });
    }
    let mut scored: Vec<(f64, FrameId)> = db
        .entries
        .iter()
        .map(|e| (squared_distance(&e.descriptor, query), e.frame_id))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().take(k).map(|(_, id)| id).collect())
}

/// Disagreement between two candidate poses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Discrepancy {
    /// Meters between the candidate translations.
    pub translation: f64,
    /// Geodesic angle (radians) between the candidate rotations.
    pub rotation: f64,
}

impl Discrepancy {
    pub const ZERO: Discrepancy = Discrepancy {
        translation: 0.0,
        rotation: 0.0,
    };
}

#[derive(Debug, Clone, PartialEq)]
pub struct Registration {
    pub pose: Pose,
    /// Retrieved reference frames, nearest first.
    pub neighbors: Vec<FrameId>,
    /// References whose relative pose was available.
    pub used: Vec<FrameId>,
    /// `None` when a provider call failed and only one candidate survived.
    pub discrepancy: Option<Discrepancy>,
}

/// Registers a query frame into scene coordinates.
pub fn register_frame<P: RelativePoseProvider + ?Sized>(
    db: &FrameDatabase,
    query_id: FrameId,
    query_descriptor: &[f64],
    provider: &P,
) -> Result<Registration, RegisterError> {
    let neighbors = retrieve_neighbors(db, query_descriptor, DEFAULT_NEIGHBORS)?;
    let mut used = Vec::with_capacity(neighbors.len());
    let mut candidates = Vec::with_capacity(neighbors.len());
    for &id in &neighbors {
        let reference = db.get(id).expect("retrieved id is in the database");
        if let Some(rel) = provider.relative_pose(query_id, id) {
            candidates.push(reference.pose.compose(&rel));
            used.push(id);
        }
    }
    let discrepancy = match (neighbors.len(), candidates.as_slice()) {
        (_, []) => return Err(RegisterError::RegistrationFailed),
        (1, [_]) => Some(Discrepancy::ZERO),
        (_, [_]) => None,
        (_, [a, b, ..]) => Some(Discrepancy {
            translation: (a.translation() - b.translation()).norm(),
            rotation: a.rotation_angle_to(b),
        }),
    };
    let pose = mean_pose(&candidates).expect("at least one candidate");
    Ok(Registration {
        pose,
        neighbors,
        used,
        discrepancy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn entry(id: FrameId, descriptor: Vec<f64>, pose: Pose) -> FrameEntry {
        FrameEntry {
            frame_id: id,
            descriptor,
            pose,
        }
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
        let axis = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.1..1.0));
        let t = Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(0.0..2.0));
        Pose::from_axis_angle(axis, rng.random_range(-3.0..3.0), t)
    }

    fn pose_db(rng: &mut ChaCha8Rng, n: usize) -> (FrameDatabase, Vec<Pose>) {
        let poses: Vec<Pose> = (0..n).map(|_| random_pose(rng)).collect();
        let entries = poses
            .iter()
            .enumerate()
            .map(|(i, p)| entry(i as FrameId * 10, pose_descriptor(p), *p))
            .collect();
        (FrameDatabase::new(entries).unwrap(), poses)
    }

    #[test]
    fn database_validation() {
        let p = Pose::identity();
        assert!(matches!(
            FrameDatabase::new(vec![entry(1, vec![0.0], p), entry(1, vec![1.0], p)]),
            Err(RegisterError::DuplicateFrame(1))
        ));
        assert!(matches!(
            FrameDatabase::new(vec![entry(1, vec![0.0], p), entry(2, vec![1.0, 2.0], p)]),
            Err(RegisterError::DescriptorLength { .. })
        ));
    }

    #[test]
    fn retrieval_clamps_and_ranks() {
        let db = FrameDatabase::new(vec![entry(7, vec![1.0, 2.0], Pose::identity())]).unwrap();
        assert_eq!(retrieve_neighbors(&db, &[9.0, 9.0], 2).unwrap(), vec![7]);
        assert!(matches!(
            retrieve_neighbors(&db, &[9.0], 2),
            Err(RegisterError::DescriptorLength { expected: 2, got: 1 })
        ));
        let empty = FrameDatabase::new(vec![]).unwrap();
        assert!(matches!(retrieve_neighbors(&empty, &[], 2), Err(RegisterError::EmptyDatabase)));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (db, _) = pose_db(&mut rng, 6);
        let stored = db.entries()[4].descriptor.clone();
        assert_eq!(retrieve_neighbors(&db, &stored, 2).unwrap()[0], 40);
    }

    #[test]
    fn retrieval_matches_exhaustive_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let entries: Vec<FrameEntry> = (0..5)
                .map(|i| entry(i, (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(), Pose::identity()))
                .collect();
            let db = FrameDatabase::new(entries.clone()).unwrap();
            let q: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            // Oracle: full sort by plain Euclidean distance.
            let mut all: Vec<(f64, u64)> = entries
                .iter()
                .map(|e| {
                    let d = e.descriptor.iter().zip(&q).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                    (d, e.frame_id)
                })
                .collect();
            all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let expected: Vec<u64> = all.iter().take(2).map(|x| x.1).collect();
            assert_eq!(retrieve_neighbors(&db, &q, 2).unwrap(), expected);
        }
    }

    #[test]
    fn ties_break_by_frame_id() {
        let db = FrameDatabase::new(vec![
            entry(9, vec![1.0], Pose::identity()),
            entry(3, vec![-1.0], Pose::identity()),
            entry(5, vec![1.0], Pose::identity()),
        ])
        .unwrap();
        assert_eq!(retrieve_neighbors(&db, &[0.0], 3).unwrap(), vec![3, 5, 9]);
    }

    #[test]
    fn exact_provider_recovers_ground_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (db, _) = pose_db(&mut rng, 25);
        for q in 0..200u64 {
            let truth = random_pose(&mut rng);
            let provider = |_query: FrameId, reference: FrameId| {
                Some(db.get(reference)?.pose.inverse().compose(&truth))
            };
            let reg = register_frame(&db, 1000 + q, &pose_descriptor(&truth), &provider).unwrap();
            assert!((reg.pose.translation() - truth.translation()).norm() < 1e-9);
            assert!(reg.pose.rotation_angle_to(&truth) < 1e-9);
            let d = reg.discrepancy.unwrap();
            assert!(d.translation < 1e-9 && d.rotation < 1e-9);
        }
    }

    #[test]
    fn query_equal_to_database_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (db, poses) = pose_db(&mut rng, 10);
        let target = poses[3];
        let provider = |_q: FrameId, r: FrameId| Some(db.get(r)?.pose.inverse().compose(&target));
        let reg = register_frame(&db, 30, &pose_descriptor(&target), &provider).unwrap();
        assert_eq!(reg.neighbors[0], 30);
        assert!((reg.pose.translation() - target.translation()).norm() < 1e-12);
        assert!(reg.pose.rotation_angle_to(&target) < 1e-12);
    }

    #[test]
    fn identity_provider_averages_references() {
        let a = Pose::from_axis_angle(Vec3::z(), 0.2, Vec3::new(0.0, 0.0, 0.0));
        let b = Pose::from_axis_angle(Vec3::z(), -0.2, Vec3::new(2.0, 0.0, 0.0));
        let db = FrameDatabase::new(vec![entry(1, vec![0.0], a), entry(2, vec![1.0], b)]).unwrap();
        let reg = register_frame(&db, 99, &[0.4], &|_q, _r| Some(Pose::identity())).unwrap();
        let expected = mean_pose(&[a, b]).unwrap();
        assert_eq!(reg.pose, expected);
        let d = reg.discrepancy.unwrap();
        assert!((d.translation - 2.0).abs() < 1e-12);
        assert!((d.rotation - 0.4).abs() < 1e-12);
    }

    #[test]
    fn provider_failures() {
        let db = FrameDatabase::new(vec![
            entry(1, vec![0.0], Pose::identity()),
            entry(2, vec![1.0], Pose::from_translation(Vec3::x())),
        ])
        .unwrap();
        assert!(matches!(
            register_frame(&db, 5, &[0.0], &|_q, _r| None),
            Err(RegisterError::RegistrationFailed)
        ));
        let partial = register_frame(&db, 5, &[0.0], &|_q, r| (r == 2).then(Pose::identity)).unwrap();
        assert_eq!(partial.used, vec![2]);
        assert_eq!(partial.discrepancy, None);
        assert_eq!(*partial.pose.translation(), Vec3::x());

        let single = FrameDatabase::new(vec![entry(1, vec![0.0], Pose::identity())]).unwrap();
        let reg = register_frame(&single, 5, &[3.0], &|_q, _r| Some(Pose::identity())).unwrap();
        assert_eq!(reg.discrepancy, Some(Discrepancy::ZERO));
    }

    #[test]
    fn registration_invariant_under_database_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (db, _) = pose_db(&mut rng, 12);
        let mut reversed = db.entries().to_vec();
        reversed.reverse();
        let db2 = FrameDatabase::new(reversed).unwrap();
        let provider = |_q: FrameId, r: FrameId| Some(Pose::from_translation(Vec3::new(r as f64 * 0.01, 0.0, 0.0)));
        for _ in 0..20 {
            let q = pose_descriptor(&random_pose(&mut rng));
            let a = register_frame(&db, 0, &q, &provider).unwrap();
            let b = register_frame(&db2, 0, &q, &provider).unwrap();
            assert_eq!(a.pose, b.pose);
        }
    }

    #[test]
    fn database_json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (db, _) = pose_db(&mut rng, 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("db.json");
        db.save(&path).unwrap();
        let back = FrameDatabase::load(&path).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in db.entries().iter().zip(back.entries()) {
            assert_eq!(a.frame_id, b.frame_id);
            assert!((a.pose.translation() - b.pose.translation()).norm() < 1e-12);
        }
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(v["entries"][0]["pose"]["rotation"].as_array().unwrap().len(), 9);
    }
}
