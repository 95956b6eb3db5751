//! Scalar abstraction shared by the plain, 64-bit oracle and dual-number
//! evaluations of the field.
//!
//! Decoder weights are stored as `f32`. Every evaluation path runs the same
//! generic code, so the value slot of a dual evaluation reproduces the plain
//! `f32` evaluation bit for bit.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

pub trait Real:
    Copy
    + Debug
    + PartialEq
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + Send
    + Sync
{
    fn zero() -> Self;
    fn one() -> Self;
    fn from_f32(v: f32) -> Self;
    fn from_f64(v: f64) -> Self;
    /// Primal value, widened to `f64`. Used only for branch decisions.
    fn value(self) -> f64;
    fn exp(self) -> Self;
    fn tanh(self) -> Self;

    /// Channel gate for a stored raw value, evaluated at this type's
    /// precision.
    #[inline]
    fn gate(raw: f32) -> Self {
        Self::from_f32(gate(raw))
    }

    /// Multiplication by a stored (constant) weight.
    #[inline]
    fn mul_f32(self, c: f32) -> Self {
        self * Self::from_f32(c)
    }

    #[inline]
    fn relu(self) -> Self {
        if self.value() > 0.0 {
            self
        } else {
            Self::zero()
        }
    }
}

impl Real for f32 {
    #[inline]
    fn zero() -> Self {
        0.0
    }
    #[inline]
    fn one() -> Self {
        1.0
    }
    #[inline]
    fn from_f32(v: f32) -> Self {
        v
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn value(self) -> f64 {
        self as f64
    }
    #[inline]
    fn exp(self) -> Self {
        f32::exp(self)
    }
    #[inline]
    fn tanh(self) -> Self {
        f32::tanh(self)
    }
    #[inline]
    fn mul_f32(self, c: f32) -> Self {
        self * c
    }
}

impl Real for f64 {
    #[inline]
    fn zero() -> Self {
        0.0
    }
    #[inline]
    fn one() -> Self {
        1.0
    }
    #[inline]
    fn from_f32(v: f32) -> Self {
        v as f64
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    #[inline]
    fn gate(raw: f32) -> Self {
        1.0 / (1.0 + (-(raw as f64)).exp())
    }
    #[inline]
    fn mul_f32(self, c: f32) -> Self {
        self * c as f64
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

/// Tanh-form GELU. Odd-symmetric in its tanh term, so
/// `gelu(a) - gelu(-a) == a` up to rounding.
#[inline]
pub fn gelu<T: Real>(x: T) -> T {
    let half = T::from_f64(0.5);
    let inner = (x + x * x * x * T::from_f64(GELU_C)) * T::from_f64(GELU_K);
    half * x * (T::one() + inner.tanh())
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_K * (x + GELU_C * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

#[inline]
pub fn elu<T: Real>(z: T) -> T {
    if z.value() > 0.0 {
        z
    } else {
        z.exp() - T::one()
    }
}

/// Positive output activation `elu(z) + 1`, evaluated as `exp(z)` for
/// `z <= 0` so small depths keep their relative precision.
#[inline]
pub fn output_activation<T: Real>(z: T) -> T {
    if z.value() > 0.0 {
        z + T::one()
    } else {
        z.exp()
    }
}

/// Inverse of [`output_activation`] for `d > 0`.
pub fn inverse_output_activation(d: f64) -> f64 {
    if d >= 1.0 {
        d - 1.0
    } else {
        d.ln()
    }
}

/// Channel gate in the open interval (0, 1), even where `f32` rounding
/// would otherwise saturate the logistic function.
#[inline]
pub fn gate(raw: f32) -> f32 {
    let g = 1.0 / (1.0 + (-raw).exp());
    g.clamp(f32::MIN_POSITIVE, 1.0 - f32::EPSILON / 2.0)
}

/// Dot product with eight interleaved accumulators. All scalar types share
/// this summation order.
#[inline]
pub fn dot<T: Real>(weights: &[f32], x: &[T]) -> T {
    debug_assert_eq!(weights.len(), x.len());
    let mut acc = [T::zero(); 8];
    let wc = weights.chunks_exact(8);
    let xc = x.chunks_exact(8);
    let (wr, xr) = (wc.remainder(), xc.remainder());
    for (w, v) in wc.zip(xc) {
        for k in 0..8 {
            acc[k] += v[k].mul_f32(w[k]);
        }
    }
    let mut tail = T::zero();
    for (w, v) in wr.iter().zip(xr) {
        tail += v.mul_f32(*w);
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}
