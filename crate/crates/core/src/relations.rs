//! Egocentric spatial relations between a person (camera pose) and objects.
//!
//! Directions are quantized in the camera's horizontal plane (`x` right,
//! `z` forward) into four quadrants centered on the camera axes.

use std::f64::consts::FRAC_PI_4;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Pose, Vec3};

/// Half-width of the distance-trend dead band (meters over the interval).
pub const SLOPE_THRESHOLD: f64 = 0.05;
/// Displacement (meters) that counts as meaningful movement.
pub const NAVIGATION_THRESHOLD: f64 = 1.5;
/// Default tie margin (meters) when comparing two distances.
pub const DEFAULT_TIE_MARGIN: f64 = 0.05;
/// Normalized times at which the person's pose is sampled for a trend.
pub const TREND_SAMPLES: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

const DEGENERATE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RelationError {
    #[error("object at person position")]
    ObjectAtPerson,
    #[error("ambiguous hand")]
    AmbiguousHand,
    #[error("interval end {end} must exceed start {start}")]
    EmptyInterval { start: f64, end: f64 },
    #[error("track does not cover [{start}, {end}]")]
    NotCovered { start: f64, end: f64 },
    #[error("fewer than 2 distinct track timestamps in interval")]
    TooFewSamples,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    Front,
    Back,
    Left,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Front, Direction::Back, Direction::Left, Direction::Right];

    pub fn word(self) -> &'static str {
        match self {
            Direction::Front => "front",
            Direction::Back => "back",
            Direction::Left => "left",
            Direction::Right => "right",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.word())
    }
}

/// Tunable thresholds. Defaults are the pipeline constants above.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub slope: f64,
    pub navigation: f64,
    pub tie_margin: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            slope: SLOPE_THRESHOLD,
            navigation: NAVIGATION_THRESHOLD,
            tie_margin: DEFAULT_TIE_MARGIN,
        }
    }
}

/// Quadrant of `object` in the person's camera frame.
///
/// With `θ = atan2(x, z)`: Front for `|θ| ≤ 45°`, Right for `45° < θ ≤ 135°`,
/// Left for `−135° ≤ θ < −45°`, Back otherwise.
pub fn relative_direction(person: &Pose, object: &Vec3) -> Result<Direction, RelationError> {
    let c = person.world_to_camera(object);
    if c.x.hypot(c.z) <= DEGENERATE {
        return Err(RelationError::ObjectAtPerson);
    }
    let theta = c.x.atan2(c.z);
    Ok(if theta.abs() <= FRAC_PI_4 {
        Direction::Front
    } else if theta > FRAC_PI_4 && theta <= 3.0 * FRAC_PI_4 {
        Direction::Right
    } else if (-3.0 * FRAC_PI_4..-FRAC_PI_4).contains(&theta) {
        Direction::Left
    } else {
        Direction::Back
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectionChange {
    pub before: Direction,
    pub after: Direction,
    pub changed: bool,
}

pub fn direction_change(at_first: &Pose, at_last: &Pose, object: &Vec3) -> Result<DirectionChange, RelationError> {
    let before = relative_direction(at_first, object)?;
    let after = relative_direction(at_last, object)?;
    Ok(DirectionChange {
        before,
        after,
        changed: before != after,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrendKind {
    Approaching,
    Receding,
    Stationary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceTrend {
    pub kind: TrendKind,
    /// Meters per normalized interval.
    pub slope: f64,
    pub distances: [f64; 5],
}

/// Ordinary least-squares slope of `ys` against `xs`.
pub fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (num, den) = xs.iter().zip(ys).fold((0.0, 0.0), |(num, den), (x, y)| {
        (num + (x - mx) * (y - my), den + (x - mx) * (x - mx))
    });
    num / den
}

/// Approaching below `−threshold`, Receding above `+threshold`, Stationary
/// on the closed band in between.
pub fn classify_slope(slope: f64, threshold: f64) -> TrendKind {
    if slope < -threshold {
        TrendKind::Approaching
    } else if slope > threshold {
        TrendKind::Receding
    } else {
        TrendKind::Stationary
    }
}

pub fn trend_from_distances(distances: [f64; 5], threshold: f64) -> DistanceTrend {
    let slope = ols_slope(&TREND_SAMPLES, &distances);
    DistanceTrend {
        kind: classify_slope(slope, threshold),
        slope,
        distances,
    }
}

/// A timestamped pose of the person.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedPose {
    pub time: f64,
    pub pose: Pose,
}

/// Index of the track entry nearest to `t`; ties go to the earlier entry.
/// `track` must be sorted by time and non-empty.
pub fn nearest_index(track: &[TimedPose], t: f64) -> usize {
    let after = track.partition_point(|e| e.time < t);
    if after == 0 {
        return 0;
    }
    if after == track.len() {
        return track.len() - 1;
    }
    let (prev, next) = (after - 1, after);
    if t - track[prev].time <= track[next].time - t {
        prev
    } else {
        next
    }
}

/// Trend of the person–object distance over `[start, end]`, from five poses
/// sampled at evenly spaced normalized times.
pub fn distance_trend(
    track: &[TimedPose],
    object: &Vec3,
    (start, end): (f64, f64),
    threshold: f64,
) -> Result<DistanceTrend, RelationError> {
    if !(end > start) {
        return Err(RelationError::EmptyInterval { start, end });
    }
    let (Some(first), Some(last)) = (track.first(), track.last()) else {
        return Err(RelationError::NotCovered { start, end });
    };
    if first.time > start || last.time < end {
        return Err(RelationError::NotCovered { start, end });
    }
    let idx = TREND_SAMPLES.map(|f| nearest_index(track, start + f * (end - start)));
    if idx.iter().all(|i| track[*i].time == track[idx[0]].time) {
        return Err(RelationError::TooFewSamples);
    }
    let distances = idx.map(|i| (track[i].pose.translation() - object).norm());
    Ok(trend_from_distances(distances, threshold))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Closer {
    A,
    B,
    Tie,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceComparison {
    pub verdict: Closer,
    pub distance_a: f64,
    pub distance_b: f64,
}

/// Which of two objects the person is closer to, with a tie band of `margin`.
pub fn closer_than(person: &Pose, a: &Vec3, b: &Vec3, margin: f64) -> DistanceComparison {
    let t = person.translation();
    let (da, db) = ((t - a).norm(), (t - b).norm());
    let verdict = if (da - db).abs() <= margin {
        Closer::Tie
    } else if da < db {
        Closer::A
    } else {
        Closer::B
    };
    DistanceComparison {
        verdict,
        distance_a: da,
        distance_b: db,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SideComparison {
    pub first: Direction,
    pub second: Direction,
    pub same: bool,
}

pub fn same_side(person: &Pose, a: &Vec3, b: &Vec3) -> Result<SideComparison, RelationError> {
    let first = relative_direction(person, a)?;
    let second = relative_direction(person, b)?;
    Ok(SideComparison {
        first,
        second,
        same: first == second,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NavigationVerdict {
    pub moved: bool,
    pub displacement: f64,
    /// Present only when `moved`.
    pub direction: Option<Direction>,
}

/// Whether reaching `destination` from `start` is a meaningful move
/// (`displacement > threshold`), and in which egocentric direction.
pub fn estimate_navigation(start: &Pose, destination: &Vec3, threshold: f64) -> Result<NavigationVerdict, RelationError> {
    let displacement = (start.translation() - destination).norm();
    let moved = displacement > threshold;
    let direction = if moved {
        Some(relative_direction(start, destination)?)
    } else {
        None
    };
    Ok(NavigationVerdict {
        moved,
        displacement,
        direction,
    })
}

/// Post-processing hook for navigation verdicts (e.g. a video model that
/// checks the preliminary estimate). The default keeps the verdict.
pub trait NavigationRefiner: Send + Sync {
    fn refine(&self, verdict: NavigationVerdict) -> NavigationVerdict;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityRefiner;

impl NavigationRefiner for IdentityRefiner {
    fn refine(&self, verdict: NavigationVerdict) -> NavigationVerdict {
        verdict
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Hand {
    LeftHand,
    RightHand,
}

impl Hand {
    pub fn side(self) -> Direction {
        match self {
            Hand::LeftHand => Direction::Left,
            Hand::RightHand => Direction::Right,
        }
    }
}

/// Hand nearer to the object, by the sign of its camera-frame `x`.
pub fn hand_proximity(person: &Pose, object: &Vec3) -> Result<Hand, RelationError> {
    let x = person.world_to_camera(object).x;
    if x.abs() <= DEGENERATE {
        Err(RelationError::AmbiguousHand)
    } else if x > 0.0 {
        Ok(Hand::RightHand)
    } else {
        Ok(Hand::LeftHand)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn yaw(angle: f64, t: Vec3) -> Pose {
        // Rotation about the camera's vertical (y) axis.
        Pose::from_axis_angle(Vec3::y(), angle, t)
    }

    #[test]
    fn axis_directions() {
        let id = Pose::identity();
        assert_eq!(relative_direction(&id, &Vec3::new(0.0, 0.0, 2.0)), Ok(Direction::Front));
        assert_eq!(relative_direction(&id, &Vec3::new(2.0, 0.0, 0.0)), Ok(Direction::Right));
        assert_eq!(relative_direction(&id, &Vec3::new(-2.0, 0.0, 0.0)), Ok(Direction::Left));
        assert_eq!(relative_direction(&id, &Vec3::new(0.0, 0.0, -2.0)), Ok(Direction::Back));
        assert_eq!(
            relative_direction(&id, &Vec3::new(0.0, 3.0, 0.0)),
            Err(RelationError::ObjectAtPerson)
        );
    }

    #[test]
    fn sector_boundaries() {
        let id = Pose::identity();
        assert_eq!(relative_direction(&id, &Vec3::new(1.0, 0.0, 1.0)), Ok(Direction::Front));
        assert_eq!(relative_direction(&id, &Vec3::new(-1.0, 0.0, 1.0)), Ok(Direction::Front));
        assert_eq!(relative_direction(&id, &Vec3::new(1.0, 0.0, -1.0)), Ok(Direction::Right));
        assert_eq!(relative_direction(&id, &Vec3::new(-1.0, 0.0, -1.0)), Ok(Direction::Left));
    }

    #[test]
    fn direction_change_cases() {
        let a = Pose::identity();
        let obj = Vec3::new(0.0, 0.0, 3.0);
        assert!(!direction_change(&a, &a, &obj).unwrap().changed);
        let turned = yaw(PI, Vec3::zeros());
        let dc = direction_change(&a, &turned, &obj).unwrap();
        assert_eq!((dc.before, dc.after, dc.changed), (Direction::Front, Direction::Back, true));
        let stepped = Pose::from_translation(Vec3::new(0.5, 0.0, 1.0));
        let dc = direction_change(&a, &stepped, &obj).unwrap();
        assert_eq!((dc.before, dc.after, dc.changed), (Direction::Front, Direction::Front, false));
    }

    fn five_point_slope(d: &[f64; 5]) -> f64 {
        // x = (0, .25, .5, .75, 1): Σ(x − x̄)² = 0.625, weights (−.5, −.25, 0, .25, .5).
        0.4 * (2.0 * (d[4] - d[0]) + (d[3] - d[1]))
    }

    #[test]
    fn trend_from_distances_cases() {
        let walk = [3.0, 2.5, 2.0, 1.5, 1.0];
        let t = trend_from_distances(walk, SLOPE_THRESHOLD);
        assert!((t.slope + 2.0).abs() < 1e-12);
        assert_eq!(t.kind, TrendKind::Approaching);

        let drift = [1.00, 1.01, 1.02, 1.03, 1.04];
        let t = trend_from_distances(drift, SLOPE_THRESHOLD);
        assert!((t.slope - 0.04).abs() < 1e-12);
        assert!((t.slope - five_point_slope(&drift)).abs() < 1e-12);
        assert_eq!(t.kind, TrendKind::Stationary);

        assert_eq!(trend_from_distances([2.0; 5], SLOPE_THRESHOLD).kind, TrendKind::Stationary);
    }

    #[test]
    fn slope_band_is_closed() {
        assert_eq!(classify_slope(0.05, 0.05), TrendKind::Stationary);
        assert_eq!(classify_slope(-0.05, 0.05), TrendKind::Stationary);
        assert_eq!(classify_slope(0.05 + 1e-9, 0.05), TrendKind::Receding);
        assert_eq!(classify_slope(-0.05 - 1e-9, 0.05), TrendKind::Approaching);
    }

    fn straight_track(from: Vec3, to: Vec3, seconds: f64) -> Vec<TimedPose> {
        let n = (seconds * 10.0).round() as usize;
        (0..=n)
            .map(|i| {
                let f = i as f64 / n as f64;
                TimedPose {
                    time: i as f64 * 0.1,
                    pose: Pose::from_translation(from + (to - from) * f),
                }
            })
            .collect()
    }

    #[test]
    fn distance_trend_on_tracks() {
        let sink = Vec3::new(0.0, 0.0, 0.0);
        let track = straight_track(Vec3::new(3.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), 4.0);
        let t = distance_trend(&track, &sink, (0.0, 4.0), SLOPE_THRESHOLD).unwrap();
        assert!((t.slope + 2.0).abs() < 1e-12);
        assert_eq!(t.kind, TrendKind::Approaching);

        let still = straight_track(Vec3::new(1.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), 4.0);
        let t = distance_trend(&still, &sink, (0.0, 4.0), SLOPE_THRESHOLD).unwrap();
        assert_eq!(t.slope, 0.0);
        assert_eq!(t.kind, TrendKind::Stationary);

        assert!(matches!(
            distance_trend(&track, &sink, (1.0, 1.0), SLOPE_THRESHOLD),
            Err(RelationError::EmptyInterval { .. })
        ));
        assert!(matches!(
            distance_trend(&track, &sink, (1.0, 9.0), SLOPE_THRESHOLD),
            Err(RelationError::NotCovered { .. })
        ));
        assert!(matches!(
            distance_trend(&[], &sink, (0.0, 1.0), SLOPE_THRESHOLD),
            Err(RelationError::NotCovered { .. })
        ));
        let sparse = vec![track[0], track[40]];
        assert!(matches!(
            distance_trend(&sparse, &sink, (0.0, 0.1), SLOPE_THRESHOLD),
            Err(RelationError::TooFewSamples)
        ));
    }

    #[test]
    fn nearest_index_prefers_earlier_on_ties() {
        let track: Vec<TimedPose> = [0.0, 1.0, 2.0]
            .iter()
            .map(|&time| TimedPose { time, pose: Pose::identity() })
            .collect();
        assert_eq!(nearest_index(&track, 0.5), 0);
        assert_eq!(nearest_index(&track, 0.51), 1);
        assert_eq!(nearest_index(&track, -3.0), 0);
        assert_eq!(nearest_index(&track, 7.0), 2);
        assert_eq!(nearest_index(&track, 1.0), 1);
    }

    #[test]
    fn closer_than_cases() {
        let p = Pose::identity();
        assert_eq!(closer_than(&p, &Vec3::x(), &(Vec3::y() * 3.0), 0.05).verdict, Closer::A);
        assert_eq!(closer_than(&p, &(Vec3::x() * 3.0), &Vec3::y(), 0.05).verdict, Closer::B);
        assert_eq!(closer_than(&p, &Vec3::x(), &Vec3::y(), 0.05).verdict, Closer::Tie);
        assert_eq!(closer_than(&p, &Vec3::x(), &(Vec3::y() * 1.04), 0.05).verdict, Closer::Tie);
    }

    #[test]
    fn same_side_cases() {
        let p = Pose::identity();
        let s = same_side(&p, &Vec3::new(0.1, 0.0, 2.0), &Vec3::new(-0.2, 0.0, 3.0)).unwrap();
        assert!(s.same);
        let s = same_side(&p, &Vec3::new(-2.0, 0.0, 0.5), &Vec3::new(2.0, 0.0, 0.5)).unwrap();
        assert_eq!((s.first, s.second, s.same), (Direction::Left, Direction::Right, false));
        assert!(same_side(&p, &Vec3::zeros(), &Vec3::x()).is_err());
    }

    #[test]
    fn navigation_threshold() {
        let p = Pose::identity();
        let v = estimate_navigation(&p, &Vec3::new(0.0, 0.0, 0.3), NAVIGATION_THRESHOLD).unwrap();
        assert!(!v.moved && v.direction.is_none());
        let v = estimate_navigation(&p, &Vec3::new(0.0, 0.0, 2.0), NAVIGATION_THRESHOLD).unwrap();
        assert!(v.moved);
        assert_eq!(v.direction, Some(Direction::Front));
        let v = estimate_navigation(&p, &Vec3::new(0.0, 0.0, 1.5), NAVIGATION_THRESHOLD).unwrap();
        assert!(!v.moved);
        let v = estimate_navigation(&p, &Vec3::new(0.0, 0.0, 1.5 + 1e-9), NAVIGATION_THRESHOLD).unwrap();
        assert!(v.moved);
        assert_eq!(IdentityRefiner.refine(v), v);
    }

    #[test]
    fn hand_cases() {
        let p = Pose::identity();
        assert_eq!(hand_proximity(&p, &Vec3::new(1.0, 0.0, 1.0)), Ok(Hand::RightHand));
        assert_eq!(hand_proximity(&p, &Vec3::new(-1.0, 0.0, 1.0)), Ok(Hand::LeftHand));
        assert_eq!(hand_proximity(&p, &Vec3::new(0.0, 0.0, 1.0)), Err(RelationError::AmbiguousHand));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn pose() -> impl Strategy<Value = Pose> {
            (prop::array::uniform3(-1.0f64..1.0), -PI..PI, prop::array::uniform3(-5.0f64..5.0))
                .prop_filter("axis", |(a, _, _)| a.iter().map(|x| x * x).sum::<f64>() > 1e-3)
                .prop_map(|(a, ang, t)| Pose::from_axis_angle(Vec3::from(a), ang, Vec3::from(t)))
        }

        proptest! {
            #[test]
            fn direction_preserved_under_positive_scaling(
                p in pose(), obj in prop::array::uniform3(-5.0f64..5.0), s in 0.1f64..10.0, y in -3.0f64..3.0
            ) {
                let c = p.world_to_camera(&Vec3::from(obj));
                prop_assume!(c.x.hypot(c.z) > 1e-6);
                let scaled = Vec3::new(c.x * s, y, c.z * s);
                let a = relative_direction(&Pose::identity(), &c).unwrap();
                let b = relative_direction(&Pose::identity(), &scaled).unwrap();
                prop_assert_eq!(a, b);
            }

            #[test]
            fn trend_invariant_under_rigid_motion(
                g in pose(), obj in prop::array::uniform3(-5.0f64..5.0),
                from in prop::array::uniform3(-5.0f64..5.0), to in prop::array::uniform3(-5.0f64..5.0)
            ) {
                let obj = Vec3::from(obj);
                let track = straight_track(Vec3::from(from), Vec3::from(to), 3.0);
                let moved: Vec<TimedPose> = track
                    .iter()
                    .map(|e| TimedPose { time: e.time, pose: g.compose(&e.pose) })
                    .collect();
                let a = distance_trend(&track, &obj, (0.0, 3.0), SLOPE_THRESHOLD).unwrap();
                let b = distance_trend(&moved, &g.camera_to_world(&obj), (0.0, 3.0), SLOPE_THRESHOLD).unwrap();
                prop_assert!((a.slope - b.slope).abs() < 1e-9);
            }

            #[test]
            fn negated_deviations_swap_trend(d in prop::array::uniform5(0.0f64..5.0)) {
                let mean = d.iter().sum::<f64>() / 5.0;
                let flipped = d.map(|x| 2.0 * mean - x);
                let a = trend_from_distances(d, SLOPE_THRESHOLD);
                let b = trend_from_distances(flipped, SLOPE_THRESHOLD);
                prop_assume!((a.slope.abs() - SLOPE_THRESHOLD).abs() > 1e-9);
                let expected = match a.kind {
                    TrendKind::Approaching => TrendKind::Receding,
                    TrendKind::Receding => TrendKind::Approaching,
                    TrendKind::Stationary => TrendKind::Stationary,
                };
                prop_assert_eq!(b.kind, expected);
            }

            #[test]
            fn navigation_monotone(d1 in 0.0f64..4.0, d2 in 0.0f64..4.0) {
                let p = Pose::identity();
                let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
                let a = estimate_navigation(&p, &Vec3::new(0.0, 0.0, lo), NAVIGATION_THRESHOLD).unwrap();
                let b = estimate_navigation(&p, &Vec3::new(0.0, 0.0, hi), NAVIGATION_THRESHOLD).unwrap();
                prop_assert!(!a.moved || b.moved);
            }

            #[test]
            fn hand_matches_sign(p in pose(), obj in prop::array::uniform3(-5.0f64..5.0)) {
                let obj = Vec3::from(obj);
                let x = p.world_to_camera(&obj).x;
                prop_assume!(x.abs() > 1e-6);
                let expected = if x > 0.0 { Hand::RightHand } else { Hand::LeftHand };
                prop_assert_eq!(hand_proximity(&p, &obj).unwrap(), expected);
            }
        }
    }
}
