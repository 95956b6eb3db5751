//! The depth field: a feature pyramid and decoder weights bound together
//! into a function `d(x, y)` over the continuous image plane.

mod params;
mod pyramid;

pub use params::{fuse_step, DecoderParams, FusionStage, Linear, FFN_EXPANSION, HEAD_HIDDEN};
pub use pyramid::{
    bilinear_query, bilinear_weights, map_coord, map_coord_raw, query_pyramid, query_pyramid_generic, FeatureLevel,
    FeaturePyramid, QueryCoord,
};

pub(crate) use params::fuse_unchecked;

use rayon::prelude::*;

use crate::autodiff::Dual2;
use crate::depth_map::DepthMap;
use crate::error::{Error, Result};
use crate::scalar::{dot, output_activation, Real};

/// Immutable pyramid + decoder pair. Safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthField {
    pyramid: FeaturePyramid,
    params: DecoderParams,
}

impl DepthField {
    pub fn new(pyramid: FeaturePyramid, params: DecoderParams) -> Result<Self> {
        pyramid.validate()?;
        params.validate_for(&pyramid.channel_dims())?;
        Ok(Self { pyramid, params })
    }

    pub fn pyramid(&self) -> &FeaturePyramid {
        &self.pyramid
    }

    pub fn params(&self) -> &DecoderParams {
        &self.params
    }

    pub fn into_parts(self) -> (FeaturePyramid, DecoderParams) {
        (self.pyramid, self.params)
    }

    /// Same pyramid, different weights.
    pub fn with_params(&self, params: DecoderParams) -> Result<Self> {
        Self::new(self.pyramid.clone(), params)
    }

    pub fn image_width(&self) -> u32 {
        self.pyramid.image_width
    }

    pub fn image_height(&self) -> u32 {
        self.pyramid.image_height
    }

    /// Depth at a continuous image coordinate. Always positive.
    pub fn decode_depth(&self, q: QueryCoord) -> Result<f32> {
        q.check(self.image_width(), self.image_height())?;
        Ok(self.eval(q.x as f32, q.y as f32))
    }

    /// Unchecked evaluation for any scalar type. `f32` is the reference
    /// path; `f64` serves the finite-difference oracles and `Dual2` the
    /// exact Jacobian.
    pub fn eval<T: Real>(&self, x: T, y: T) -> T {
        output_activation(self.eval_preactivation(x, y, &mut |_| {}))
    }

    pub(crate) fn eval_preactivation<T: Real>(&self, x: T, y: T, visit: &mut impl FnMut(T)) -> T {
        let feats = query_pyramid_generic(&self.pyramid, x, y);
        preactivation_from_features(&self.params, feats, visit)
    }

    /// Samples the field at pixel centers `((i + 0.5) W / out_w, (j + 0.5) H / out_h)`.
    pub fn decode_grid(&self, out_w: usize, out_h: usize) -> Result<DepthMap> {
        if out_w == 0 || out_h == 0 {
            return Err(Error::InvalidArgument(format!("output grid {out_w}x{out_h}")));
        }
        let values: Vec<f64> = (0..out_h)
            .into_par_iter()
            .flat_map_iter(|j| {
                (0..out_w).map(move |i| {
                    let q = self.pixel_center(i, j, out_w, out_h);
                    self.eval(q.x as f32, q.y as f32) as f64
                })
            })
            .collect();
        DepthMap::from_raw(out_w, out_h, values)
    }

    /// Image coordinate of the center of pixel `(i, j)` in an `out_w x out_h` grid.
    pub fn pixel_center(&self, i: usize, j: usize, out_w: usize, out_h: usize) -> QueryCoord {
        QueryCoord::new(
            (i as f64 + 0.5) * self.image_width() as f64 / out_w as f64,
            (j as f64 + 0.5) * self.image_height() as f64 / out_h as f64,
        )
    }

    /// Distance (image pixels) from `q` to the nearest point where the field
    /// is only piecewise smooth: an interpolation-cell edge on any level, or
    /// the zero set of a head ReLU (first-order estimate).
    pub fn kink_distance(&self, q: QueryCoord) -> f64 {
        let (w, h) = (self.image_width() as f64, self.image_height() as f64);
        let mut best = f64::INFINITY;
        for level in &self.pyramid.levels {
            let sx = level.width as f64 / w;
            let sy = level.height as f64 / h;
            let xk = q.x * sx;
            let yk = q.y * sy;
            best = best.min((xk - xk.round()).abs() / sx);
            best = best.min((yk - yk.round()).abs() / sy);
        }
        let x = Dual2::var_x(q.x);
        let y = Dual2::var_y(q.y);
        self.eval_preactivation(x, y, &mut |a: Dual2<f64>| {
            let g = a.dx.hypot(a.dy);
            if g > 0.0 {
                best = best.min(a.value.abs() / g);
            }
        });
        best
    }

    /// Smallest magnitude of any head ReLU pre-activation at `q`. A parameter
    /// perturbation smaller than this leaves every ReLU on the same side.
    pub fn relu_margin(&self, q: QueryCoord) -> f64 {
        let mut best = f64::INFINITY;
        self.eval_preactivation(q.x, q.y, &mut |a: f64| best = best.min(a.abs()));
        best
    }
}

/// Decoder pre-activation `z` from already interpolated per-level features.
pub(crate) fn preactivation_from_features<T: Real>(
    params: &DecoderParams,
    feats: Vec<Vec<T>>,
    visit: &mut impl FnMut(T),
) -> T {
    let mut levels = feats.into_iter();
    let mut h = levels.next().expect("validated pyramid has a level");
    for (stage, f_next) in params.stages.iter().zip(levels) {
        h = fuse_unchecked(&h, &f_next, stage);
    }
    head_visit(&params.head, &h, visit)
}

fn head_visit<T: Real>(head: &[Linear; 3], h: &[T], visit: &mut impl FnMut(T)) -> T {
    let mut layer = |lin: &Linear, x: &[T]| -> Vec<T> {
        (0..lin.rows)
            .map(|r| {
                let a = T::from_f32(lin.bias[r]) + dot(lin.row(r), x);
                visit(a);
                a.relu()
            })
            .collect()
    };
    let a1 = layer(&head[0], h);
    let a2 = layer(&head[1], &a1);
    head[2].forward(&a2)[0]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_field() -> DepthField {
        let l1 = FeatureLevel::new(3, 4, 2, (0..24).map(|v| (v as f32 * 0.3).sin()).collect()).unwrap();
        let l2 = FeatureLevel::new(2, 2, 3, (0..12).map(|v| (v as f32 * 0.7).cos()).collect()).unwrap();
        let pyramid = FeaturePyramid::new(vec![l1, l2], 8, 6).unwrap();
        let mut params = DecoderParams::zeros(&[2, 3]);
        for (t, tensor) in params.tensors_mut().into_iter().enumerate() {
            for (i, v) in tensor.iter_mut().enumerate() {
                *v = ((t * 31 + i * 7) as f32 * 0.13).sin() * 0.3;
            }
        }
        DepthField::new(pyramid, params).unwrap()
    }

    #[test]
    fn relu_margin_is_smallest_head_preactivation() {
        let field = tiny_field();
        let q = QueryCoord::new(3.1, 2.2);
        let mut expected = f64::INFINITY;
        field.eval_preactivation(q.x, q.y, &mut |a: f64| expected = expected.min(a.abs()));
        assert_eq!(field.relu_margin(q), expected);
        assert!(expected.is_finite());
    }

    #[test]
    fn zero_head_gives_unit_depth() {
        let l1 = FeatureLevel::filled(4, 4, 2, 0.3).unwrap();
        let pyramid = FeaturePyramid::new(vec![l1], 4, 4).unwrap();
        let field = DepthField::new(pyramid, DecoderParams::zeros(&[2])).unwrap();
        for &(x, y) in &[(0.0, 0.0), (1.3, 2.7), (4.0, 4.0)] {
            assert_eq!(field.decode_depth(QueryCoord::new(x, y)).unwrap(), 1.0);
        }
        let grid = field.decode_grid(7, 3).unwrap();
        assert!(grid.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn decode_is_deterministic_and_positive() {
        let field = tiny_field();
        let q = QueryCoord::new(3.3, 2.1);
        let a = field.decode_depth(q).unwrap();
        let b = field.decode_depth(q).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(a > 0.0);
        let g1 = field.decode_grid(5, 4).unwrap();
        let g2 = field.decode_grid(5, 4).unwrap();
        assert_eq!(g1, g2);
    }

    #[test]
    fn one_by_one_grid_is_center_query() {
        let field = tiny_field();
        let grid = field.decode_grid(1, 1).unwrap();
        let center = field.decode_depth(QueryCoord::new(4.0, 3.0)).unwrap();
        assert_eq!(grid.values()[0], center as f64);
    }

    #[test]
    fn rejects_out_of_range_and_mismatched_params() {
        let field = tiny_field();
        assert!(field.decode_depth(QueryCoord::new(-0.1, 1.0)).is_err());
        assert!(field.decode_depth(QueryCoord::new(1.0, 6.01)).is_err());
        assert!(field.decode_grid(0, 3).is_err());
        let (pyramid, _) = field.into_parts();
        assert!(DepthField::new(pyramid, DecoderParams::zeros(&[3, 3])).is_err());
    }
}
