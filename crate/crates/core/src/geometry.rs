//! Pinhole back-projection, surface normals from the field Jacobian, and
//! per-pixel surface-area weights.
//!
//! Camera frame is right-handed with +Z forward; no lens distortion.

use crate::autodiff::depth_jacobian;
use crate::error::{Error, Result};
use crate::field::{DepthField, QueryCoord};

/// Default stabilizer in the area-weight denominator.
pub const DEFAULT_AREA_EPS: f64 = 1e-4;

/// Cross products below this norm are treated as degenerate.
const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = Self { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "intrinsics fx={} fy={} cx={} cy={}",
                self.fx, self.fy, self.cx, self.cy
            )));
        }
        Ok(())
    }

    /// Un-normalized ray `((x - cx) / fx, (y - cy) / fy, 1)`.
    pub fn ray(&self, x: f64, y: f64) -> [f64; 3] {
        [(x - self.cx) / self.fx, (y - self.cy) / self.fy, 1.0]
    }

    /// Projects a camera-frame point back to `(x, y, depth)`.
    pub fn project(&self, p: [f64; 3]) -> (f64, f64, f64) {
        (p[0] / p[2] * self.fx + self.cx, p[1] / p[2] * self.fy + self.cy, p[2])
    }
}

/// Camera-frame points with optional unit normals and 8-bit colors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f32; 3]>,
    pub normals: Option<Vec<[f32; 3]>>,
    pub colors: Option<Vec<[u8; 3]>>,
}

impl PointCloud {
    pub fn from_points(points: Vec<[f32; 3]>) -> Self {
        Self {
            points,
            normals: None,
            colors: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(p) = self
            .points
            .iter()
            .find(|p| !(p[2] > 0.0) || p.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::InvalidArgument(format!(
                "point {p:?} is not in front of the camera"
            )));
        }
        if let Some(normals) = &self.normals {
            if normals.len() != self.points.len() {
                return Err(Error::Shape(format!(
                    "{} normals for {} points",
                    normals.len(),
                    self.points.len()
                )));
            }
            for n in normals {
                let norm = n.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
                // f32 storage bounds how tightly a normal can be unit length
                if (norm - 1.0).abs() > 1e-6 {
                    return Err(Error::InvalidArgument(format!("normal {n:?} has norm {norm}")));
                }
            }
        }
        if let Some(colors) = &self.colors {
            if colors.len() != self.points.len() {
                return Err(Error::Shape(format!(
                    "{} colors for {} points",
                    colors.len(),
                    self.points.len()
                )));
            }
        }
        Ok(())
    }
}

/// `X = d (x - cx) / fx`, `Y = d (y - cy) / fy`, `Z = d`.
pub fn backproject(q: QueryCoord, depth: f64, k: &CameraIntrinsics) -> Result<[f64; 3]> {
    if !(depth > 0.0 && depth.is_finite()) {
        return Err(Error::InvalidDepth(depth));
    }
    let r = k.ray(q.x, q.y);
    Ok([depth * r[0], depth * r[1], depth])
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm3(a: [f64; 3]) -> f64 {
    dot3(a, a).sqrt()
}

/// Unit viewing direction from the camera center toward pixel `(x, y)`.
pub fn view_direction(q: QueryCoord, k: &CameraIntrinsics) -> [f64; 3] {
    let r = k.ray(q.x, q.y);
    let n = norm3(r);
    [r[0] / n, r[1] / n, r[2] / n]
}

/// Camera-facing unit normal of the back-projected surface given the depth
/// and its image-plane partials at `q`.
pub fn normal_from_jacobian(q: QueryCoord, depth: f64, ddx: f64, ddy: f64, k: &CameraIntrinsics) -> Result<[f64; 3]> {
    let r = k.ray(q.x, q.y);
    // X = d * r(x, y); dr/dx = (1/fx, 0, 0), dr/dy = (0, 1/fy, 0)
    let tx = [ddx * r[0] + depth / k.fx, ddx * r[1], ddx];
    let ty = [ddy * r[0], ddy * r[1] + depth / k.fy, ddy];
    let c = cross(tx, ty);
    let len = norm3(c);
    if !(len >= DEGENERATE_NORM) {
        return Err(Error::DegenerateSurface(len));
    }
    let mut n = [c[0] / len, c[1] / len, c[2] / len];
    if dot3(n, r) > 0.0 {
        n = [-n[0], -n[1], -n[2]];
    }
    Ok(n)
}

/// Surface normal from the exact (forward-mode) Jacobian of the field.
pub fn surface_normal(field: &DepthField, q: QueryCoord, k: &CameraIntrinsics) -> Result<[f64; 3]> {
    let (d, ddx, ddy) = depth_jacobian(field, q)?;
    normal_from_jacobian(q, d as f64, ddx as f64, ddy as f64, k)
}

/// `w = d^2 / (|n . v| + eps)` for a known depth and normal.
pub fn area_weight_from(depth: f64, normal: [f64; 3], view: [f64; 3], eps: f64) -> f64 {
    depth * depth / (dot3(normal, view).abs() + eps)
}

/// Surface-area weight of the field at `q`.
pub fn area_weight(field: &DepthField, q: QueryCoord, k: &CameraIntrinsics, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("area-weight epsilon {eps}")));
    }
    let (d, ddx, ddy) = depth_jacobian(field, q)?;
    let n = normal_from_jacobian(q, d as f64, ddx as f64, ddy as f64, k)?;
    Ok(area_weight_from(d as f64, n, view_direction(q, k), eps))
}

/// Angle between two unit vectors, in degrees.
pub fn angle_deg(a: [f64; 3], b: [f64; 3]) -> f64 {
    let c = (dot3(a, b) / (norm3(a) * norm3(b))).clamp(-1.0, 1.0);
    c.acos().to_degrees()
}
