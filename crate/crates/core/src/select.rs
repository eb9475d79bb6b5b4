//! Representative-frame selection: a frame filter hook and seeded k-means
//! over camera translations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geom::{Pose, Vec3};
use crate::register::FrameId;

pub const DEFAULT_REPRESENTATIVES: usize = 25;
pub const MAX_ITERATIONS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SelectError {
    #[error("no frames to cluster")]
    NoFrames,
    #[error("k must be at least 1")]
    ZeroK,
}

/// Keep/drop decision per frame, e.g. "no hands visible".
pub trait FramePredicate {
    fn keep(&self, frame_id: FrameId) -> bool;
}

impl<F: Fn(FrameId) -> bool> FramePredicate for F {
    fn keep(&self, frame_id: FrameId) -> bool {
        self(frame_id)
    }
}

pub fn filter_frames<P: FramePredicate + ?Sized>(frames: &[(FrameId, Pose)], pred: &P) -> Vec<(FrameId, Pose)> {
    frames.iter().filter(|(id, _)| pred.keep(*id)).copied().collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    /// Cluster id per input frame, in input order.
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec3>,
    /// One member frame id per cluster.
    pub representatives: Vec<FrameId>,
    /// Sum of squared distances to centroids after each Lloyd iteration.
    pub sse_history: Vec<f64>,
}

impl ClusterResult {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn sse(&self) -> f64 {
        self.sse_history.last().copied().unwrap_or(0.0)
    }
}

/// Sum of squared distances between each point and the centroid of its cluster.
pub fn sse(points: &[Vec3], assignments: &[usize], centroids: &[Vec3]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &c)| (p - centroids[c]).norm_squared())
        .sum()
}

/// Member means for a given assignment. Empty clusters get the origin.
pub fn cluster_means(points: &[Vec3], assignments: &[usize], k: usize) -> Vec<Vec3> {
    let mut sums = vec![Vec3::zeros(); k];
    let mut counts = vec![0usize; k];
    for (p, &c) in points.iter().zip(assignments) {
        sums[c] += p;
        counts[c] += 1;
    }
    sums.iter()
        .zip(&counts)
        .map(|(s, &n)| if n == 0 { Vec3::zeros() } else { s / n as f64 })
        .collect()
}

/// Cluster frames by camera translation and pick one representative each.
///
/// Deterministic for a fixed input order and seed. Translations are
/// expressed relative to the first frame internally.
pub fn select_representatives(frames: &[(FrameId, Pose)], k: usize, seed: u64) -> Result<ClusterResult, SelectError> {
    if frames.is_empty() {
        return Err(SelectError::NoFrames);
    }
    if k == 0 {
        return Err(SelectError::ZeroK);
    }
    let origin = frames[0].1.translation();
    let points: Vec<Vec3> = frames.iter().map(|(_, p)| p.translation() - origin).collect();
    let k = k.min(points.len());

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_plus_plus(&points, k, &mut rng);
    let mut assignments: Vec<usize> = Vec::new();
    let mut sse_history = Vec::new();
    for _ in 0..MAX_ITERATIONS {
        let mut next: Vec<usize> = points.iter().map(|p| nearest(&centroids, p)).collect();
        repair_empty(&points, &centroids, &mut next, k);
        if next == assignments {
            break;
        }
        assignments = next;
        centroids = cluster_means(&points, &assignments, k);
        sse_history.push(sse(&points, &assignments, &centroids));
    }

    let mut best: Vec<Option<(f64, FrameId)>> = vec![None; k];
    for ((id, _), (p, &c)) in frames.iter().zip(points.iter().zip(&assignments)) {
        let d = (p - centroids[c]).norm_squared();
        let candidate = (d, *id);
        if best[c].is_none_or(|b| candidate < b) {
            best[c] = Some(candidate);
        }
    }
    let representatives = best.into_iter().map(|b| b.expect("cluster non-empty").1).collect();
    Ok(ClusterResult {
        assignments,
        centroids: centroids.into_iter().map(|c| c + origin).collect(),
        representatives,
        sse_history,
    })
}

fn nearest(centroids: &[Vec3], p: &Vec3) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, c) in centroids.iter().enumerate() {
        let d = (p - c).norm_squared();
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

fn kmeans_plus_plus(points: &[Vec3], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec3> {
    let mut chosen = vec![rng.random_range(0..points.len())];
    let mut d2: Vec<f64> = points.iter().map(|p| (p - points[chosen[0]]).norm_squared()).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // Rounding can leave the target just past the last increment.
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).expect("positive total"))
        } else {
            (0..points.len()).find(|i| !chosen.contains(i)).expect("k ≤ n")
        };
        chosen.push(pick);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min((p - points[pick]).norm_squared());
        }
    }
    chosen.into_iter().map(|i| points[i]).collect()
}

/// Give every empty cluster the point farthest from its current centroid,
/// taken from a cluster that keeps at least one member.
fn repair_empty(points: &[Vec3], centroids: &[Vec3], assignments: &mut [usize], k: usize) {
    let mut counts = vec![0usize; k];
    for &c in assignments.iter() {
        counts[c] += 1;
    }
    for empty in 0..k {
        if counts[empty] > 0 {
            continue;
        }
        let mut best: Option<(f64, usize)> = None;
        for (i, p) in points.iter().enumerate() {
            let c = assignments[i];
            if counts[c] < 2 {
                continue;
            }
            let d = (p - centroids[c]).norm_squared();
            if best.is_none_or(|(bd, _)| d > bd) {
                best = Some((d, i));
            }
        }
        let (_, i) = best.expect("k ≤ n leaves a cluster with spare members");
        counts[assignments[i]] -= 1;
        assignments[i] = empty;
        counts[empty] = 1;
    }
}
