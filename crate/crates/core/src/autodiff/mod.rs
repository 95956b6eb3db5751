//! Exact derivatives of the depth field.
//!
//! * Forward mode in the image coordinates ([`depth_jacobian`]) via
//!   [`Dual2`] numbers, used for surface normals.
//! * Reverse mode in the decoder parameters ([`loss_gradients`]), used for
//!   training. Interpolated features are constants on this tape.
//! * Central-difference oracles for both ([`fd_jacobian`],
//!   [`fd_param_gradients`]), evaluated in 64-bit.

mod backward;
mod dual;

pub use backward::{fd_param_gradients, loss_gradients, ParamGradients};
pub use dual::Dual2;

use crate::error::{Error, Result};
use crate::field::{DepthField, QueryCoord};

/// Depth and its partials `(d, dd/dx, dd/dy)` at `q`.
///
/// The value slot is computed by the same operation sequence as
/// [`DepthField::decode_depth`] and matches it bit for bit. At
/// interpolation-cell edges the field has kinks; there the derivative of
/// the cell containing `q` (floor convention) is returned.
pub fn depth_jacobian(field: &DepthField, q: QueryCoord) -> Result<(f32, f32, f32)> {
    check_interior(field, q)?;
    let x = Dual2::var_x(q.x as f32);
    let y = Dual2::var_y(q.y as f32);
    let d = field.eval(x, y);
    Ok((d.value, d.dx, d.dy))
}

/// Central differences `(d(x + h) - d(x - h)) / 2h` on the 64-bit field.
pub fn fd_jacobian(field: &DepthField, q: QueryCoord, h: f64) -> Result<(f64, f64)> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!("finite-difference step {h}")));
    }
    let (w, ht) = (field.image_width() as f64, field.image_height() as f64);
    if !(q.x - h >= 0.0 && q.x + h <= w && q.y - h >= 0.0 && q.y + h <= ht) {
        return Err(Error::NonDifferentiable { x: q.x, y: q.y });
    }
    let f = |x: f64, y: f64| field.eval(x, y);
    let dx = (f(q.x + h, q.y) - f(q.x - h, q.y)) / (2.0 * h);
    let dy = (f(q.x, q.y + h) - f(q.x, q.y - h)) / (2.0 * h);
    Ok((dx, dy))
}

/// The open image rectangle. On its boundary one-sided clamping makes the
/// field non-differentiable.
fn check_interior(field: &DepthField, q: QueryCoord) -> Result<()> {
    let (w, h) = (field.image_width() as f64, field.image_height() as f64);
    let inside = q.x.is_finite() && q.y.is_finite() && q.x > 0.0 && q.x < w && q.y > 0.0 && q.y < h;
    if inside {
        Ok(())
    } else {
        Err(Error::NonDifferentiable { x: q.x, y: q.y })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{DecoderParams, FeatureLevel, FeaturePyramid};

    fn constant_field() -> DepthField {
        let l1 = FeatureLevel::filled(4, 4, 2, 0.3).unwrap();
        let l2 = FeatureLevel::filled(2, 2, 2, -0.1).unwrap();
        let pyramid = FeaturePyramid::new(vec![l1, l2], 8, 8).unwrap();
        DepthField::new(pyramid, DecoderParams::zeros(&[2, 2])).unwrap()
    }

    #[test]
    fn constant_field_has_zero_gradient() {
        let field = constant_field();
        let (d, dx, dy) = depth_jacobian(&field, QueryCoord::new(3.1, 4.7)).unwrap();
        assert_eq!((d, dx, dy), (1.0, 0.0, 0.0));
        assert_eq!(
            fd_jacobian(&field, QueryCoord::new(3.1, 4.7), 1e-3).unwrap(),
            (0.0, 0.0)
        );
    }

    #[test]
    fn boundary_queries_are_rejected() {
        let field = constant_field();
        for &(x, y) in &[(0.0, 3.0), (8.0, 3.0), (3.0, 0.0), (3.0, 8.0), (f64::NAN, 1.0)] {
            assert!(matches!(
                depth_jacobian(&field, QueryCoord::new(x, y)),
                Err(Error::NonDifferentiable { .. })
            ));
        }
        assert!(fd_jacobian(&field, QueryCoord::new(0.0005, 3.0), 1e-3).is_err());
        assert!(fd_jacobian(&field, QueryCoord::new(3.0, 3.0), 0.0).is_err());
    }
}
