//! Area-weighted surface sampling.
//!
//! Per-pixel area weights are normalized into a discrete distribution,
//! allocated deterministically with stratified inverse-transform sampling,
//! jittered inside their pixels, and back-projected through the field.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{DepthField, QueryCoord};
use crate::geometry::{area_weight, backproject, CameraIntrinsics, PointCloud, DEFAULT_AREA_EPS};

/// Nonnegative per-pixel weights, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMap {
    pub width: usize,
    pub height: usize,
    pub weights: Vec<f64>,
}

impl WeightMap {
    pub fn new(width: usize, height: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != width * height {
            return Err(Error::Shape(format!(
                "weight map {width}x{height} given {} weights",
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "weight {w} is not finite and nonnegative"
            )));
        }
        Ok(Self { width, height, weights })
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Jittered continuous coordinates, in the units of the grid they were drawn on.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySet {
    pub coords: Vec<QueryCoord>,
    pub seed: u64,
}

/// Area weight at every pixel center of a `grid_w x grid_h` grid spanning the
/// image. Pixels whose normal degenerates get weight 0.
pub fn build_weight_map(field: &DepthField, k: &CameraIntrinsics, grid_w: usize, grid_h: usize) -> Result<WeightMap> {
    build_weight_map_eps(field, k, grid_w, grid_h, DEFAULT_AREA_EPS)
}

pub fn build_weight_map_eps(
    field: &DepthField,
    k: &CameraIntrinsics,
    grid_w: usize,
    grid_h: usize,
    eps: f64,
) -> Result<WeightMap> {
    if grid_w < 2 || grid_h < 2 {
        return Err(Error::InvalidArgument(format!(
            "weight grid {grid_w}x{grid_h} (need >= 2)"
        )));
    }
    k.validate()?;
    let weights = (0..grid_w * grid_h)
        .into_par_iter()
        .map(|idx| {
            let q = field.pixel_center(idx % grid_w, idx / grid_w, grid_w, grid_h);
            match area_weight(field, q, k, eps) {
                Ok(w) => Ok(w),
                Err(Error::DegenerateSurface(_)) => Ok(0.0),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    let wm = WeightMap::new(grid_w, grid_h, weights)?;
    if wm.total() <= 0.0 {
        return Err(Error::ZeroMass);
    }
    Ok(wm)
}

/// `p_i = w_i / sum(w)`.
pub fn normalize_probs(wm: &WeightMap) -> Result<Vec<f64>> {
    normalize(&wm.weights)
}

pub(crate) fn normalize(w: &[f64]) -> Result<Vec<f64>> {
    if let Some(v) = w.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "weight {v} is not finite and nonnegative"
        )));
    }
    let total: f64 = w.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::ZeroMass);
    }
    Ok(w.iter().map(|v| v / total).collect())
}

/// For each target `q_j = (j + 0.5) / N`, the smallest index with
/// `CDF(k) >= q_j`. Indices come out non-decreasing in `j`.
pub fn stratified_indices(p: &[f64], n: usize) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be >= 1".into()));
    }
    if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidArgument(
            "probabilities must be finite and nonnegative".into(),
        ));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("probabilities sum to {total}")));
    }
    let last = p.iter().rposition(|&v| v > 0.0).ok_or(Error::ZeroMass)?;
    let cdf: Vec<f64> = p
        .iter()
        .scan(0.0f64, |acc, &v| {
            *acc += v;
            Some(*acc)
        })
        .collect();
    Ok((0..n)
        .map(|j| {
            let q = (j as f64 + 0.5) / n as f64;
            // rounding can leave the final CDF entry a hair below q
            cdf.partition_point(|&c| c < q).min(last)
        })
        .collect())
}

/// Places one point uniformly inside each indexed pixel:
/// `(u + 0.5 + du, v + 0.5 + dv)` with `du, dv` in `[-0.5, 0.5)`.
pub fn jitter_coords(indices: &[usize], grid_w: usize, grid_h: usize, seed: u64) -> Result<QuerySet> {
    if let Some(&bad) = indices.iter().find(|&&i| i >= grid_w * grid_h) {
        return Err(Error::InvalidArgument(format!(
            "pixel index {bad} outside a {grid_w}x{grid_h} grid"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords = indices
        .iter()
        .map(|&idx| {
            let du = rng.random::<f64>() - 0.5;
            let dv = rng.random::<f64>() - 0.5;
            let (u, v) = ((idx % grid_w) as f64, (idx / grid_w) as f64);
            QueryCoord::new(u + 0.5 + du, v + 0.5 + dv)
        })
        .collect();
    Ok(QuerySet { coords, seed })
}

/// `N` area-uniform surface points, drawn on the nominal pixel grid.
pub fn sample_surface(field: &DepthField, k: &CameraIntrinsics, n: usize, seed: u64) -> Result<PointCloud> {
    let (w, h) = (field.image_width() as usize, field.image_height() as usize);
    sample_surface_on_grid(field, k, n, seed, w, h)
}

pub fn sample_surface_on_grid(
    field: &DepthField,
    k: &CameraIntrinsics,
    n: usize,
    seed: u64,
    grid_w: usize,
    grid_h: usize,
) -> Result<PointCloud> {
    let wm = build_weight_map(field, k, grid_w, grid_h)?;
    let p = normalize_probs(&wm)?;
    let indices = stratified_indices(&p, n)?;
    let qs = jitter_coords(&indices, grid_w, grid_h, seed)?;
    let sx = field.image_width() as f64 / grid_w as f64;
    let sy = field.image_height() as f64 / grid_h as f64;
    let coords: Vec<QueryCoord> = qs.coords.iter().map(|c| QueryCoord::new(c.x * sx, c.y * sy)).collect();
    unproject(field, k, &coords)
}

/// One point per pixel center of a `grid_w x grid_h` grid: the naive
/// baseline whose density follows the image, not the surface.
pub fn sample_per_pixel(field: &DepthField, k: &CameraIntrinsics, grid_w: usize, grid_h: usize) -> Result<PointCloud> {
    if grid_w == 0 || grid_h == 0 {
        return Err(Error::InvalidArgument(format!("grid {grid_w}x{grid_h}")));
    }
    let coords: Vec<QueryCoord> = (0..grid_w * grid_h)
        .map(|idx| field.pixel_center(idx % grid_w, idx / grid_w, grid_w, grid_h))
        .collect();
    unproject(field, k, &coords)
}

fn unproject(field: &DepthField, k: &CameraIntrinsics, coords: &[QueryCoord]) -> Result<PointCloud> {
    k.validate()?;
    let points = coords
        .par_iter()
        .map(|&q| {
            let d = field.decode_depth(q)?;
            let p = backproject(q, d as f64, k)?;
            Ok([p[0] as f32, p[1] as f32, p[2] as f32])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PointCloud::from_points(points))
}

/// A rectangle of equal-area cells on a planar surface patch, spanned by
/// two orthonormal in-plane axes through `origin`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceCells {
    pub origin: [f64; 3],
    pub axis_u: [f64; 3],
    pub axis_v: [f64; 3],
    pub u_range: (f64, f64),
    pub v_range: (f64, f64),
    pub nu: usize,
    pub nv: usize,
}

impl SurfaceCells {
    pub fn num_cells(&self) -> usize {
        self.nu * self.nv
    }

    /// Cell containing `p`, or `None` if its in-plane coordinates fall
    /// outside the rectangle.
    pub fn cell_of(&self, p: [f64; 3]) -> Option<usize> {
        let r = [p[0] - self.origin[0], p[1] - self.origin[1], p[2] - self.origin[2]];
        let dot = |a: [f64; 3]| r[0] * a[0] + r[1] * a[1] + r[2] * a[2];
        let fu = (dot(self.axis_u) - self.u_range.0) / (self.u_range.1 - self.u_range.0);
        let fv = (dot(self.axis_v) - self.v_range.0) / (self.v_range.1 - self.v_range.0);
        if !(0.0..=1.0).contains(&fu) || !(0.0..=1.0).contains(&fv) {
            return None;
        }
        let cu = ((fu * self.nu as f64) as usize).min(self.nu - 1);
        let cv = ((fv * self.nv as f64) as usize).min(self.nv - 1);
        Some(cv * self.nu + cu)
    }

    fn validate(&self) -> Result<()> {
        let du = self.u_range.1 - self.u_range.0;
        let dv = self.v_range.1 - self.v_range.0;
        if !(du > 0.0 && dv > 0.0 && du.is_finite() && dv.is_finite()) {
            return Err(Error::Degenerate(format!(
                "cell extent {:?} x {:?}",
                self.u_range, self.v_range
            )));
        }
        if self.nu == 0 || self.nv == 0 {
            return Err(Error::InvalidArgument(format!("{}x{} cells", self.nu, self.nv)));
        }
        Ok(())
    }
}

/// Minimum number of points (inside the cells) for a density estimate.
pub const MIN_DENSITY_POINTS: usize = 100;

/// Coefficient of variation (population std / mean) of per-cell point
/// counts. Points outside the cell rectangle are ignored; empty cells count.
pub fn density_cv(pc: &PointCloud, cells: &SurfaceCells) -> Result<f64> {
    cells.validate()?;
    let mut counts = vec![0u64; cells.num_cells()];
    let mut inside = 0usize;
    for p in &pc.points {
        if let Some(c) = cells.cell_of([p[0] as f64, p[1] as f64, p[2] as f64]) {
            counts[c] += 1;
            inside += 1;
        }
    }
    if inside < MIN_DENSITY_POINTS {
        return Err(Error::InvalidArgument(format!(
            "{inside} points inside the cells (need >= {MIN_DENSITY_POINTS})"
        )));
    }
    let m = counts.len() as f64;
    let mean = inside as f64 / m;
    let var = counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / m;
    Ok(var.sqrt() / mean)
}
