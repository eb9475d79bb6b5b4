//! Ray-direction positional encoding for visual features: per-pixel ray
//! grids, adaptive average pooling to patch resolution, point-cloud rays in
//! the first camera frame, sin/cos octave encoding and additive fusion.

use std::f64::consts::PI;
use std::io::{self, Read, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::cloud::PointCloud;
use crate::geom::{Intrinsics, Pose, Vec3};

/// Query-token count of the downstream visual resampler.
pub const QUERY_TOKENS: usize = 32;
/// Feature width of visual tokens.
pub const FEATURE_DIM: usize = 768;
pub const DEFAULT_OCTAVES: usize = 10;
/// Points closer than this to the camera center have no direction.
pub const DEGENERATE_DISTANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum PosencError {
    #[error("grid size {height}x{width} is invalid")]
    InvalidSize { height: usize, width: usize },
    #[error("cannot pool {from_h}x{from_w} to {to_h}x{to_w}")]
    PoolSize { from_h: usize, from_w: usize, to_h: usize, to_w: usize },
    #[error("at least one octave is required")]
    NoOctaves,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("dump io: {0}")]
    Io(#[from] io::Error),
}

/// Row-major `height × width` grid of camera-frame rays.
#[derive(Debug, Clone, PartialEq)]
pub struct RayGrid {
    height: usize,
    width: usize,
    rays: Vec<Vec3>,
}

impl RayGrid {
    pub fn new(height: usize, width: usize, rays: Vec<Vec3>) -> Result<Self, PosencError> {
        if height == 0 || width == 0 {
            return Err(PosencError::InvalidSize { height, width });
        }
        if rays.len() != height * width {
            return Err(PosencError::Shape(format!("{} rays for a {height}x{width} grid", rays.len())));
        }
        Ok(Self { height, width, rays })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn rays(&self) -> &[Vec3] {
        &self.rays
    }

    pub fn at(&self, row: usize, col: usize) -> Vec3 {
        self.rays[row * self.width + col]
    }
}

/// Unit ray through the center of every pixel of an `height × width` image.
pub fn pixel_ray_grid(intr: &Intrinsics, height: usize, width: usize) -> Result<RayGrid, PosencError> {
    if height == 0 || width == 0 {
        return Err(PosencError::InvalidSize { height, width });
    }
    let rays: Vec<Vec3> = (0..height)
        .into_par_iter()
        .flat_map_iter(|v| (0..width).map(move |u| intr.pixel_ray(u as f64, v as f64)))
        .collect();
    RayGrid::new(height, width, rays)
}

fn bin(i: usize, from: usize, to: usize) -> std::ops::Range<usize> {
    (i * from / to)..((i + 1) * from / to)
}

/// Adaptive average pooling to `height × width`. Cell `(i, j)` averages
/// input rows `[⌊iH/H'⌋, ⌊(i+1)H/H'⌋)` and the matching columns. Pooled
/// rays keep their (shorter) mean length.
pub fn pool_ray_grid(grid: &RayGrid, height: usize, width: usize) -> Result<RayGrid, PosencError> {
    pool(grid, height, width, false)
}

/// [`pool_ray_grid`] followed by renormalization of every cell.
pub fn pool_ray_grid_normalized(grid: &RayGrid, height: usize, width: usize) -> Result<RayGrid, PosencError> {
    pool(grid, height, width, true)
}

fn pool(grid: &RayGrid, height: usize, width: usize, renormalize: bool) -> Result<RayGrid, PosencError> {
    if height == 0 || width == 0 || height > grid.height || width > grid.width {
        return Err(PosencError::PoolSize {
            from_h: grid.height,
            from_w: grid.width,
            to_h: height,
            to_w: width,
        });
    }
    let rays: Vec<Vec3> = (0..height)
        .into_par_iter()
        .flat_map_iter(|i| {
            (0..width).map(move |j| {
                let (rows, cols) = (bin(i, grid.height, height), bin(j, grid.width, width));
                let count = (rows.len() * cols.len()) as f64;
                let mut sum = Vec3::zeros();
                for r in rows {
                    for c in cols.clone() {
                        sum += grid.at(r, c);
                    }
                }
                let mean = sum / count;
                match mean.try_normalize(0.0) {
                    Some(unit) if renormalize => unit,
                    _ => mean,
                }
            })
        })
        .collect();
    RayGrid::new(height, width, rays)
}

/// Unit directions of cloud points seen from the first camera.
#[derive(Debug, Clone, PartialEq)]
pub struct PointRays {
    pub rays: Vec<Vec3>,
    /// Index of the source point of each ray.
    pub indices: Vec<usize>,
    /// Points dropped for sitting on the camera center.
    pub degenerate: usize,
}

pub fn point_cloud_rays(pc: &PointCloud, first_camera: &Pose) -> PointRays {
    let mut out = PointRays {
        rays: Vec::with_capacity(pc.len()),
        indices: Vec::with_capacity(pc.len()),
        degenerate: 0,
    };
    for (i, p) in pc.points().iter().enumerate() {
        let c = first_camera.world_to_camera(p);
        let n = c.norm();
        if n <= DEGENERATE_DISTANCE {
            out.degenerate += 1;
        } else {
            out.rays.push(c / n);
            out.indices.push(i);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FourierParams {
    num_octaves: usize,
}

impl FourierParams {
    pub fn new(num_octaves: usize) -> Result<Self, PosencError> {
        if num_octaves == 0 {
            return Err(PosencError::NoOctaves);
        }
        Ok(Self { num_octaves })
    }

    pub fn num_octaves(&self) -> usize {
        self.num_octaves
    }

    /// Encoding length for a 3-vector.
    pub fn dim(&self) -> usize {
        6 * self.num_octaves
    }
}

impl Default for FourierParams {
    fn default() -> Self {
        Self {
            num_octaves: DEFAULT_OCTAVES,
        }
    }
}

/// `γ(r)`: for each of x, y, z and each octave `ℓ`, the pair
/// `(sin(2^ℓ π c), cos(2^ℓ π c))`, component-major.
pub fn fourier_encode(r: &Vec3, params: FourierParams) -> Vec<f64> {
    let mut out = Vec::with_capacity(params.dim());
    for c in r.iter() {
        for l in 0..params.num_octaves {
            let (s, co) = (2f64.powi(l as i32) * PI * c).sin_cos();
            out.push(s);
            out.push(co);
        }
    }
    out
}

/// Dense row-major `rows × dim` matrix of finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    dim: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, dim: usize, values: Vec<f64>) -> Result<Self, PosencError> {
        if values.len() != rows * dim {
            return Err(PosencError::Shape(format!("{} values for {rows}x{dim}", values.len())));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(PosencError::NonFinite(i));
        }
        Ok(Self { rows, dim, values })
    }

    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self {
            rows,
            dim,
            values: vec![0.0; rows * dim],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Little-endian dump: `u32 rows`, `u32 dim`, then `rows·dim` f32 values.
    pub fn write_f32<W: Write>(&self, mut w: W) -> Result<(), PosencError> {
        let too_big = |n: usize| u32::try_from(n).map_err(|_| PosencError::Shape(format!("{n} does not fit the header")));
        w.write_all(&too_big(self.rows)?.to_le_bytes())?;
        w.write_all(&too_big(self.dim)?.to_le_bytes())?;
        for v in &self.values {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_f32<R: Read>(mut r: R) -> Result<Self, PosencError> {
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let rows = u32::from_le_bytes(word) as usize;
        r.read_exact(&mut word)?;
        let dim = u32::from_le_bytes(word) as usize;
        let mut values = Vec::with_capacity(rows * dim);
        for _ in 0..rows * dim {
            r.read_exact(&mut word)?;
            values.push(f64::from(f32::from_le_bytes(word)));
        }
        Self::new(rows, dim, values)
    }
}

/// `x ↦ W·x + b` with `W` stored row-major as `out_dim × in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineProjection {
    out_dim: usize,
    in_dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl AffineProjection {
    pub fn new(out_dim: usize, in_dim: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self, PosencError> {
        if weights.len() != out_dim * in_dim || bias.len() != out_dim {
            return Err(PosencError::Shape(format!(
                "weights {} and bias {} for {out_dim}x{in_dim}",
                weights.len(),
                bias.len()
            )));
        }
        if let Some(i) = weights.iter().chain(&bias).position(|v| !v.is_finite()) {
            return Err(PosencError::NonFinite(i));
        }
        Ok(Self {
            out_dim,
            in_dim,
            weights,
            bias,
        })
    }

    pub fn zeros(out_dim: usize, params: FourierParams) -> Self {
        Self {
            out_dim,
            in_dim: params.dim(),
            weights: vec![0.0; out_dim * params.dim()],
            bias: vec![0.0; out_dim],
        }
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }
}

/// `fᵢ + W·γ(rᵢ) + b` for every row.
pub fn fuse_position(
    features: &FeatureMatrix,
    rays: &[Vec3],
    params: FourierParams,
    proj: &AffineProjection,
) -> Result<FeatureMatrix, PosencError> {
    if rays.len() != features.rows {
        return Err(PosencError::Shape(format!("{} rays for {} feature rows", rays.len(), features.rows)));
    }
    if proj.in_dim != params.dim() || proj.out_dim != features.dim {
        return Err(PosencError::Shape(format!(
            "projection {}x{} for features of width {} and encoding of length {}",
            proj.out_dim,
            proj.in_dim,
            features.dim,
            params.dim()
        )));
    }
    let values: Vec<f64> = rays
        .par_iter()
        .enumerate()
        .flat_map_iter(|(i, r)| {
            let pos = proj.apply(&fourier_encode(r, params));
            features.row(i).iter().zip(pos).map(|(f, p)| f + p).collect::<Vec<_>>()
        })
        .collect();
    FeatureMatrix::new(features.rows, features.dim, values)
}
