use crate::error::{Error, Result};
use crate::scalar::Real;

/// One dense feature grid. `data` is row-major and channel-last:
/// the vector at row `j`, column `i` starts at `(j * width + i) * channels`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureLevel {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl FeatureLevel {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        let level = Self {
            height,
            width,
            channels,
            data,
        };
        level.validate()?;
        Ok(level)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < 2 || self.width < 2 || self.channels < 1 {
            return Err(Error::InvalidPyramid(format!(
                "level of size {}x{}x{} (need h >= 2, w >= 2, C >= 1)",
                self.height, self.width, self.channels
            )));
        }
        let expected = self.height * self.width * self.channels;
        if self.data.len() != expected {
            return Err(Error::InvalidPyramid(format!(
                "level data has {} values, expected {expected}",
                self.data.len()
            )));
        }
        if let Some(pos) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidPyramid(format!("non-finite feature at index {pos}")));
        }
        Ok(())
    }

    /// Feature vector stored at column `i`, row `j`.
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> &[f32] {
        let start = (j * self.width + i) * self.channels;
        &self.data[start..start + self.channels]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut [f32] {
        let start = (j * self.width + i) * self.channels;
        &mut self.data[start..start + self.channels]
    }
}

/// Multi-scale conditioning features, shallow (high resolution) first.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    pub levels: Vec<FeatureLevel>,
    pub image_width: u32,
    pub image_height: u32,
}

impl FeaturePyramid {
    pub fn new(levels: Vec<FeatureLevel>, image_width: u32, image_height: u32) -> Result<Self> {
        let p = Self {
            levels,
            image_width,
            image_height,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::InvalidPyramid("pyramid has no levels".into()));
        }
        if self.image_width == 0 || self.image_height == 0 {
            return Err(Error::InvalidPyramid(format!(
                "image size {}x{} must be positive",
                self.image_width, self.image_height
            )));
        }
        for (k, level) in self.levels.iter().enumerate() {
            level
                .validate()
                .map_err(|e| Error::InvalidPyramid(format!("level {}: {e}", k + 1)))?;
        }
        for (k, pair) in self.levels.windows(2).enumerate() {
            if pair[1].height > pair[0].height || pair[1].width > pair[0].width {
                return Err(Error::InvalidPyramid(format!(
                    "level {} ({}x{}) is larger than level {} ({}x{})",
                    k + 2,
                    pair[1].width,
                    pair[1].height,
                    k + 1,
                    pair[0].width,
                    pair[0].height
                )));
            }
        }
        Ok(())
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn channel_dims(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.channels).collect()
    }
}

/// Continuous image-plane coordinate in `[0, W] x [0, H]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryCoord {
    pub x: f64,
    pub y: f64,
}

impl QueryCoord {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn check(&self, width: u32, height: u32) -> Result<()> {
        let ok = self.x.is_finite()
            && self.y.is_finite()
            && (0.0..=width as f64).contains(&self.x)
            && (0.0..=height as f64).contains(&self.y);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidCoordinate {
                x: self.x,
                y: self.y,
                width,
                height,
            })
        }
    }
}

/// Maps an image coordinate to level coordinates `(x * w_k / W, y * h_k / H)`
/// without clamping.
pub fn map_coord_raw<T: Real>(x: T, y: T, level: &FeatureLevel, width: u32, height: u32) -> (T, T) {
    let xk = x.mul_f32(level.width as f32) / T::from_f32(width as f32);
    let yk = y.mul_f32(level.height as f32) / T::from_f32(height as f32);
    (xk, yk)
}

/// Maps a query onto a level and clamps it to `[0, w_k - 1] x [0, h_k - 1]`,
/// where feature `(i, j)` sits at continuous level coordinate `(i, j)`.
pub fn map_coord(q: QueryCoord, level: &FeatureLevel, width: u32, height: u32) -> Result<(f64, f64)> {
    if !q.x.is_finite() || !q.y.is_finite() || width == 0 || height == 0 {
        return Err(Error::InvalidCoordinate {
            x: q.x,
            y: q.y,
            width,
            height,
        });
    }
    let (xk, yk) = map_coord_raw(q.x, q.y, level, width, height);
    Ok(clamp_level(xk, yk, level))
}

#[inline]
fn clamp_level<T: Real>(xk: T, yk: T, level: &FeatureLevel) -> (T, T) {
    (clamp_axis(xk, level.width), clamp_axis(yk, level.height))
}

#[inline]
fn clamp_axis<T: Real>(v: T, size: usize) -> T {
    let hi = (size - 1) as f64;
    if v.value() < 0.0 {
        T::zero()
    } else if v.value() > hi {
        T::from_f64(hi)
    } else {
        v
    }
}

/// The four bilinear neighbours `(i, j)` and their weights, in the order
/// `(i0, j0), (i1, j0), (i0, j1), (i1, j1)`. Neighbours past the last row or
/// column clamp to the edge.
#[inline]
pub fn bilinear_weights<T: Real>(xk: T, yk: T, level: &FeatureLevel) -> [(usize, usize, T); 4] {
    let fx0 = xk.value().floor();
    let fy0 = yk.value().floor();
    let i0 = (fx0.max(0.0) as usize).min(level.width - 1);
    let j0 = (fy0.max(0.0) as usize).min(level.height - 1);
    let i1 = (i0 + 1).min(level.width - 1);
    let j1 = (j0 + 1).min(level.height - 1);
    let tx = xk - T::from_f64(i0 as f64);
    let ty = yk - T::from_f64(j0 as f64);
    let sx = T::one() - tx;
    let sy = T::one() - ty;
    [
        (i0, j0, sx * sy),
        (i1, j0, tx * sy),
        (i0, j1, sx * ty),
        (i1, j1, tx * ty),
    ]
}

/// Bilinear blend of the four neighbours of an already clamped level
/// coordinate, evaluated as nested lerps: this equals the weighted sum of
/// [`bilinear_weights`] but returns grid values and constant neighbourhoods
/// exactly.
pub fn bilinear_query<T: Real>(level: &FeatureLevel, xk: T, yk: T) -> Vec<T> {
    let [(i0, j0, _), (i1, _, _), (_, j1, _), _] = bilinear_weights(xk, yk, level);
    let tx = xk - T::from_f64(i0 as f64);
    let ty = yk - T::from_f64(j0 as f64);
    let (f00, f10, f01, f11) = (level.at(i0, j0), level.at(i1, j0), level.at(i0, j1), level.at(i1, j1));
    (0..level.channels)
        .map(|c| {
            let top = T::from_f32(f00[c]) + tx * (T::from_f32(f10[c]) - T::from_f32(f00[c]));
            let bottom = T::from_f32(f01[c]) + tx * (T::from_f32(f11[c]) - T::from_f32(f01[c]));
            top + ty * (bottom - top)
        })
        .collect()
}

/// One interpolated feature vector per pyramid level.
pub fn query_pyramid_generic<T: Real>(p: &FeaturePyramid, x: T, y: T) -> Vec<Vec<T>> {
    p.levels
        .iter()
        .map(|level| {
            let (xk, yk) = map_coord_raw(x, y, level, p.image_width, p.image_height);
            let (xk, yk) = clamp_level(xk, yk, level);
            bilinear_query(level, xk, yk)
        })
        .collect()
}

pub fn query_pyramid(p: &FeaturePyramid, q: QueryCoord) -> Result<Vec<Vec<f32>>> {
    q.check(p.image_width, p.image_height)?;
    Ok(query_pyramid_generic(p, q.x as f32, q.y as f32))
}
