//! Rigid-body pose algebra, pinhole intrinsics and ray back-projection.
//!
//! Conventions used throughout the crate:
//!
//! * A [`Pose`] maps camera-frame coordinates into world coordinates
//!   (camera-to-world).
//! * Camera frames are `x` right, `y` down, `z` forward.
//! * Pixel `(u, v)` is sampled at its center, `(u + 0.5, v + 0.5)`.

use std::cmp::Ordering;

use num_traits::Zero;
use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Position (meters) or direction (unitless) in 3-space.
pub type Vec3 = Vector3<f64>;

/// Tolerance on `RᵀR = I` and `det R = 1` when validating a pose.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Drift above which `compose` re-orthonormalizes its product.
const REORTHONORMALIZE_DRIFT: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("rotation is not orthonormal (max deviation {0:e})")]
    NotOrthonormal(f64),
    #[error("rotation determinant is {0}, expected 1")]
    NotProper(f64),
    #[error("non-finite pose component")]
    NonFinite,
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
    #[error("no poses in interval")]
    NoPoses,
}

/// Rigid transform from camera coordinates to world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseRepr", into = "PoseRepr")]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vec3,
}

/// Wire form of a pose: row-major rotation and a translation vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct PoseRepr {
    rotation: [f64; 9],
    translation: [f64; 3],
}

impl From<Pose> for PoseRepr {
    fn from(p: Pose) -> Self {
        let r = p.rotation;
        PoseRepr {
            rotation: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            translation: [p.translation.x, p.translation.y, p.translation.z],
        }
    }
}

impl TryFrom<PoseRepr> for Pose {
    type Error = GeomError;

    fn try_from(r: PoseRepr) -> Result<Self, Self::Error> {
        Pose::new(
            Matrix3::from_row_slice(&r.rotation),
            Vec3::from_column_slice(&r.translation),
        )
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    /// Builds a pose, checking that `rotation` is a proper rotation.
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self, GeomError> {
        if rotation.iter().chain(translation.iter()).any(|v| !v.is_finite()) {
            return Err(GeomError::NonFinite);
        }
        let drift = orthonormality_drift(&rotation);
        if drift > ROTATION_TOLERANCE {
            return Err(GeomError::NotOrthonormal(drift));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(GeomError::NotProper(det));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    pub fn from_quaternion(q: UnitQuaternion<f64>, translation: Vec3) -> Self {
        Self {
            rotation: q.to_rotation_matrix().into_inner(),
            translation,
        }
    }

    /// Rotation of `angle` radians about `axis` (normalized internally).
    pub fn from_axis_angle(axis: Vec3, angle: f64, translation: Vec3) -> Self {
        let axis = nalgebra::Unit::new_normalize(axis);
        Self {
            rotation: Rotation3::from_axis_angle(&axis, angle).into_inner(),
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation))
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        let mut rotation = self.rotation * other.rotation;
        if orthonormality_drift(&rotation) > REORTHONORMALIZE_DRIFT {
            rotation = orthonormalize(&rotation);
        }
        Pose {
            rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Maps a world point into this camera's frame: `Rᵀ(p − t)`.
    pub fn world_to_camera(&self, p_world: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p_world - self.translation)
    }

    /// Maps a camera-frame point into world coordinates: `Rp + t`.
    pub fn camera_to_world(&self, p_camera: &Vec3) -> Vec3 {
        self.rotation * p_camera + self.translation
    }

    /// Geodesic angle (radians) between the rotations of two poses.
    pub fn rotation_angle_to(&self, other: &Pose) -> f64 {
        let rel = self.rotation.transpose() * other.rotation;
        let c = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        // acos loses precision near zero; recover the angle from the skew part.
        let s = Vec3::new(
            rel[(2, 1)] - rel[(1, 2)],
            rel[(0, 2)] - rel[(2, 0)],
            rel[(1, 0)] - rel[(0, 1)],
        )
        .norm()
            / 2.0;
        s.atan2(c)
    }
}

/// Largest entry of `|RᵀR − I|`.
fn orthonormality_drift(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).amax()
}

fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    Rotation3::from_matrix_eps(r, 1e-15, 100, Rotation3::from_matrix_unchecked(*r)).into_inner()
}

/// Pinhole camera intrinsics (pixels).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "IntrinsicsRepr", into = "IntrinsicsRepr")]
pub struct Intrinsics {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
}

#[derive(Serialize, Deserialize)]
struct IntrinsicsRepr {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
}

impl From<Intrinsics> for IntrinsicsRepr {
    fn from(i: Intrinsics) -> Self {
        IntrinsicsRepr {
            fx: i.fx,
            fy: i.fy,
            cx: i.cx,
            cy: i.cy,
            width: i.width,
            height: i.height,
        }
    }
}

impl TryFrom<IntrinsicsRepr> for Intrinsics {
    type Error = GeomError;
    fn try_from(r: IntrinsicsRepr) -> Result<Self, GeomError> {
        Intrinsics::new(r.fx, r.fy, r.cx, r.cy, r.width, r.height)
    }
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeomError> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(GeomError::InvalidIntrinsics("focal lengths must be positive"));
        }
        if width == 0 || height == 0 {
            return Err(GeomError::InvalidIntrinsics("image size must be non-zero"));
        }
        if !(0.0..width as f64).contains(&cx) || !(0.0..height as f64).contains(&cy) {
            return Err(GeomError::InvalidIntrinsics("principal point outside image"));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    pub fn fx(&self) -> f64 {
        self.fx
    }
    pub fn fy(&self) -> f64 {
        self.fy
    }
    pub fn cx(&self) -> f64 {
        self.cx
    }
    pub fn cy(&self) -> f64 {
        self.cy
    }
    pub fn width(&self) -> u32 {
        self.width
    }
    pub fn height(&self) -> u32 {
        self.height
    }

    /// Unit camera-frame ray through the center of pixel `(u, v)`.
    pub fn pixel_ray(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new(
            (u + 0.5 - self.cx) / self.fx,
            (v + 0.5 - self.cy) / self.fy,
            1.0,
        )
        .normalize()
    }

    /// Continuous image coordinates of a camera-frame point, `None` when
    /// the point is not in front of the camera.
    pub fn project(&self, p_camera: &Vec3) -> Option<(f64, f64)> {
        if p_camera.z <= 0.0 {
            return None;
        }
        Some((
            self.fx * p_camera.x / p_camera.z + self.cx,
            self.fy * p_camera.y / p_camera.z + self.cy,
        ))
    }
}

/// Mean of a set of poses.
///
/// Translation is the arithmetic mean. Rotation is the normalized average
/// of unit quaternions, each sign-aligned to the first. Inputs are put in a
/// canonical order before summation, so the result is bitwise independent
/// of the order of `poses`.
pub fn mean_pose(poses: &[Pose]) -> Result<Pose, GeomError> {
    match poses {
        [] => Err(GeomError::NoPoses),
        [only] => Ok(*only),
        _ => {
            let mut keyed: Vec<(Vector4<f64>, Vec3)> = poses
                .iter()
                .map(|p| (canonical_quaternion(&p.quaternion()), p.translation))
                .collect();
            keyed.sort_by(|a, b| lexicographic(a.0.iter().chain(a.1.iter()), b.0.iter().chain(b.1.iter())));

            let reference = keyed[0].0;
            let quats: Vec<Vector4<f64>> = keyed
                .iter()
                .map(|(q, _)| if q.dot(&reference) < 0.0 { -q } else { *q })
                .collect();
            let trans: Vec<Vec3> = keyed.iter().map(|(_, t)| *t).collect();

            let n = poses.len() as f64;
            let q_sum = pairwise_sum(&quats);
            let t_mean = pairwise_sum(&trans) / n;
            let q = UnitQuaternion::from_quaternion(Quaternion::from_vector(q_sum));
            Ok(Pose::from_quaternion(q, t_mean))
        }
    }
}

/// Quaternion as `(i, j, k, w)` with the sign fixed so the first non-zero
/// component of `(w, i, j, k)` is positive.
fn canonical_quaternion(q: &UnitQuaternion<f64>) -> Vector4<f64> {
    let v = *q.as_vector();
    let lead = [v[3], v[0], v[1], v[2]]
        .into_iter()
        .find(|c| *c != 0.0)
        .unwrap_or(1.0);
    if lead < 0.0 {
        -v
    } else {
        v
    }
}

fn lexicographic<'a>(a: impl Iterator<Item = &'a f64>, b: impl Iterator<Item = &'a f64>) -> Ordering {
    for (x, y) in a.zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    Ordering::Equal
}

/// Pairwise (cascade) summation in slice order.
pub fn pairwise_sum<T>(values: &[T]) -> T
where
    T: Copy + std::ops::Add<Output = T> + Zero,
{
    match values.len() {
        0 => T::zero(),
        1 => values[0],
        2 => values[0] + values[1],
        n => {
            let (lo, hi) = values.split_at(n / 2);
            pairwise_sum(lo) + pairwise_sum(hi)
        }
    }
}
