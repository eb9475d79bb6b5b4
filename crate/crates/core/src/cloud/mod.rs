//! Colored point clouds, voxel downsampling and mask-based object localization.

pub mod ply;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Intrinsics, Pose, Vec3};

/// Default voxel edge length (meters) for downsampling scene clouds.
pub const DEFAULT_VOXEL_SIZE: f64 = 0.06;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CloudError {
    #[error("points and colors differ in length ({points} vs {colors})")]
    LengthMismatch { points: usize, colors: usize },
    #[error("non-finite coordinate at point {0}")]
    NonFinite(usize),
    #[error("color out of [0, 1] at point {0}")]
    ColorRange(usize),
    #[error("voxel size must be positive, got {0}")]
    InvalidVoxel(f64),
    #[error("mask has {got} bits, expected {expected}")]
    MaskSize { expected: usize, got: usize },
    #[error("mask is empty")]
    EmptyMask,
    #[error("object not visible in frame")]
    NotVisible,
}

/// Point positions (meters) with per-point RGB colors in `[0, 1]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    points: Vec<Vec3>,
    colors: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>, colors: Vec<Vec3>) -> Result<Self, CloudError> {
        if points.len() != colors.len() {
            return Err(CloudError::LengthMismatch {
                points: points.len(),
                colors: colors.len(),
            });
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(CloudError::NonFinite(i));
        }
        if let Some(i) = colors
            .iter()
            .position(|c| c.iter().any(|v| !(0.0..=1.0).contains(v)))
        {
            return Err(CloudError::ColorRange(i));
        }
        Ok(Self { points, colors })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn colors(&self) -> &[Vec3] {
        &self.colors
    }

    /// Replaces each occupied voxel `floor(p / voxel)` by the centroid of its
    /// members (and their mean color). Output is ordered by voxel key.
    pub fn voxel_downsample(&self, voxel: f64) -> Result<PointCloud, CloudError> {
        if !(voxel > 0.0 && voxel.is_finite()) {
            return Err(CloudError::InvalidVoxel(voxel));
        }

        struct Cell {
            sum: Vec3,
            color: Vec3,
            lo: Vec3,
            hi: Vec3,
            count: usize,
        }

        let mut cells: BTreeMap<[i64; 3], Cell> = BTreeMap::new();
        for (p, c) in self.points.iter().zip(&self.colors) {
            cells
                .entry(voxel_key(p, voxel))
                .and_modify(|cell| {
                    cell.sum += p;
                    cell.color += c;
                    cell.lo = cell.lo.inf(p);
                    cell.hi = cell.hi.sup(p);
                    cell.count += 1;
                })
                .or_insert(Cell {
                    sum: *p,
                    color: *c,
                    lo: *p,
                    hi: *p,
                    count: 1,
                });
        }

        let mut points = Vec::with_capacity(cells.len());
        let mut colors = Vec::with_capacity(cells.len());
        for cell in cells.into_values() {
            let n = cell.count as f64;
            // Clamp to the member box so rounding never moves a centroid
            // into a neighbouring voxel.
            let centroid = (cell.sum / n).sup(&cell.lo).inf(&cell.hi);
            points.push(centroid);
            colors.push((cell.color / n).map(|v| v.clamp(0.0, 1.0)));
        }
        Ok(PointCloud { points, colors })
    }
}

/// Integer voxel coordinates of `p` for edge length `voxel`.
pub fn voxel_key(p: &Vec3, voxel: f64) -> [i64; 3] {
    [
        (p.x / voxel).floor() as i64,
        (p.y / voxel).floor() as i64,
        (p.z / voxel).floor() as i64,
    ]
}

/// Binary image mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "MaskRepr", into = "MaskRepr")]
pub struct Mask2D {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

/// Run-length wire form: `runs` holds `(start, length)` pairs over the
/// row-major pixel index.
#[derive(Serialize, Deserialize)]
struct MaskRepr {
    width: u32,
    height: u32,
    runs: Vec<[u32; 2]>,
}

impl From<Mask2D> for MaskRepr {
    fn from(m: Mask2D) -> Self {
        let mut runs = Vec::new();
        let mut i = 0;
        while i < m.bits.len() {
            if m.bits[i] {
                let start = i;
                while i < m.bits.len() && m.bits[i] {
                    i += 1;
                }
                runs.push([start as u32, (i - start) as u32]);
            } else {
                i += 1;
            }
        }
        MaskRepr {
            width: m.width,
            height: m.height,
            runs,
        }
    }
}

impl TryFrom<MaskRepr> for Mask2D {
    type Error = CloudError;
    fn try_from(r: MaskRepr) -> Result<Self, CloudError> {
        let n = r.width as usize * r.height as usize;
        let mut bits = vec![false; n];
        for [start, len] in r.runs {
            let (s, e) = (start as usize, start as usize + len as usize);
            if e > n {
                return Err(CloudError::MaskSize { expected: n, got: e });
            }
            bits[s..e].fill(true);
        }
        Ok(Mask2D {
            width: r.width,
            height: r.height,
            bits,
        })
    }
}

impl Mask2D {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn full(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![true; width as usize * height as usize],
        }
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Result<Self, CloudError> {
        let expected = width as usize * height as usize;
        if bits.len() != expected {
            return Err(CloudError::MaskSize {
                expected,
                got: bits.len(),
            });
        }
        Ok(Self { width, height, bits })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut m = Self::new(width, height);
        for v in 0..height {
            for u in 0..width {
                m.bits[(v * width + u) as usize] = f(u, v);
            }
        }
        m
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn set(&mut self, u: u32, v: u32, on: bool) {
        if u < self.width && v < self.height {
            self.bits[(v * self.width + u) as usize] = on;
        }
    }

    /// Membership test; out-of-image coordinates are never covered.
    pub fn contains(&self, u: i64, v: i64) -> bool {
        u >= 0
            && v >= 0
            && u < self.width as i64
            && v < self.height as i64
            && self.bits[(v as usize) * self.width as usize + u as usize]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }
}

/// Optional robust trimming for [`localize_object`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LocalizeOptions {
    /// Drop points farther than `k · MAD` from the component-wise median
    /// before averaging. `None` keeps the plain mean.
    pub trim_mad: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Localization {
    pub position: Vec3,
    /// Points that projected into the mask (before any trimming).
    pub kept: usize,
}

/// Averages the world positions of cloud points whose projection into the
/// frame `(intr, pose)` lands on a covered mask pixel.
pub fn localize_object(
    pc: &PointCloud,
    mask: &Mask2D,
    intr: &Intrinsics,
    pose: &Pose,
    opts: LocalizeOptions,
) -> Result<Localization, CloudError> {
    if mask.is_empty() {
        return Err(CloudError::EmptyMask);
    }
    let kept: Vec<Vec3> = pc
        .points()
        .iter()
        .filter(|p| {
            let c = pose.world_to_camera(p);
            match intr.project(&c) {
                // Pixel u covers [u, u + 1): the nearest pixel center is u + 0.5.
                Some((u, v)) => mask.contains(u.floor() as i64, v.floor() as i64),
                None => false,
            }
        })
        .copied()
        .collect();
    if kept.is_empty() {
        return Err(CloudError::NotVisible);
    }
    let used = match opts.trim_mad {
        Some(k) => trim_by_mad(&kept, k),
        None => kept.clone(),
    };
    let position = crate::geom::pairwise_sum(&used) / used.len() as f64;
    Ok(Localization {
        position,
        kept: kept.len(),
    })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn trim_by_mad(points: &[Vec3], k: f64) -> Vec<Vec3> {
    let mut center = Vec3::zeros();
    for axis in 0..3 {
        let mut col: Vec<f64> = points.iter().map(|p| p[axis]).collect();
        center[axis] = median(&mut col);
    }
    let dists: Vec<f64> = points.iter().map(|p| (p - center).norm()).collect();
    let typical = median(&mut dists.clone());
    let mut deviations: Vec<f64> = dists.iter().map(|d| (d - typical).abs()).collect();
    let mad = median(&mut deviations);
    let limit = typical + k * mad;
    let kept: Vec<Vec3> = points
        .iter()
        .copied()
        .filter(|p| (p - center).norm() <= limit)
        .collect();
    if kept.is_empty() {
        points.to_vec()
    } else {
        kept
    }
}
