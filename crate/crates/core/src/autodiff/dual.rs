use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use crate::scalar::Real;

/// Dual number carrying a value and its partials with respect to the two
/// image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual2<T> {
    pub value: T,
    pub dx: T,
    pub dy: T,
}

impl<T: Real> Dual2<T> {
    pub fn new(value: T, dx: T, dy: T) -> Self {
        Self { value, dx, dy }
    }

    pub fn constant(value: T) -> Self {
        Self::new(value, T::zero(), T::zero())
    }

    /// Seeds the x coordinate: tangent (1, 0).
    pub fn var_x(value: T) -> Self {
        Self::new(value, T::one(), T::zero())
    }

    /// Seeds the y coordinate: tangent (0, 1).
    pub fn var_y(value: T) -> Self {
        Self::new(value, T::zero(), T::one())
    }

    #[inline]
    fn scale_tangent(self, f: T) -> (T, T) {
        (self.dx * f, self.dy * f)
    }
}

impl<T: Real> Add for Dual2<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.value + o.value, self.dx + o.dx, self.dy + o.dy)
    }
}

impl<T: Real> AddAssign for Dual2<T> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<T: Real> Sub for Dual2<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.value - o.value, self.dx - o.dx, self.dy - o.dy)
    }
}

impl<T: Real> Mul for Dual2<T> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Self::new(
            self.value * o.value,
            self.dx * o.value + self.value * o.dx,
            self.dy * o.value + self.value * o.dy,
        )
    }
}

impl<T: Real> Div for Dual2<T> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let inv = T::one() / o.value;
        let v = self.value / o.value;
        Self::new(v, (self.dx - v * o.dx) * inv, (self.dy - v * o.dy) * inv)
    }
}

impl<T: Real> Neg for Dual2<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.value, -self.dx, -self.dy)
    }
}

impl<T: Real> Real for Dual2<T> {
    fn zero() -> Self {
        Self::constant(T::zero())
    }
    fn one() -> Self {
        Self::constant(T::one())
    }
    fn from_f32(v: f32) -> Self {
        Self::constant(T::from_f32(v))
    }
    fn from_f64(v: f64) -> Self {
        Self::constant(T::from_f64(v))
    }
    fn value(self) -> f64 {
        self.value.value()
    }
    fn exp(self) -> Self {
        let e = self.value.exp();
        let (dx, dy) = self.scale_tangent(e);
        Self::new(e, dx, dy)
    }
    fn tanh(self) -> Self {
        let t = self.value.tanh();
        let (dx, dy) = self.scale_tangent(T::one() - t * t);
        Self::new(t, dx, dy)
    }
    #[inline]
    fn gate(raw: f32) -> Self {
        Self::constant(T::gate(raw))
    }
    fn mul_f32(self, c: f32) -> Self {
        Self::new(self.value.mul_f32(c), self.dx.mul_f32(c), self.dy.mul_f32(c))
    }
}
