//! Forward-mode automatic differentiation.
//!
//! The differentiable kernels (splatting, projection, alignment losses) are
//! written once, generic over [`Real`], and evaluated either on plain `f64`
//! or on [`Jet<N>`] to obtain the value together with `N` partial
//! derivatives.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

pub trait Real:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
    + AddAssign
    + SubAssign
{
    fn cst(v: f64) -> Self;
    fn val(&self) -> f64;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn abs(self) -> Self;
    /// Logistic sigmoid, evaluated without overflow for large `|x|`.
    fn sigmoid(self) -> Self;

    fn min(self, other: Self) -> Self {
        if other.val() < self.val() {
            other
        } else {
            self
        }
    }

    fn max(self, other: Self) -> Self {
        if other.val() > self.val() {
            other
        } else {
            self
        }
    }
}

fn sigmoid_f64(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Real for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn val(&self) -> f64 {
        *self
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn sigmoid(self) -> Self {
        sigmoid_f64(self)
    }
}

/// A value with `N` tangent components.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet<const N: usize> {
    pub v: f64,
    pub d: [f64; N],
}

impl<const N: usize> Jet<N> {
    pub fn constant(v: f64) -> Self {
        Self { v, d: [0.0; N] }
    }

    /// Independent variable `i` with value `v`.
    pub fn var(v: f64, i: usize) -> Self {
        let mut d = [0.0; N];
        d[i] = 1.0;
        Self { v, d }
    }

    #[inline]
    fn chain(self, v: f64, dv: f64) -> Self {
        let mut d = self.d;
        for x in d.iter_mut() {
            *x *= dv;
        }
        Self { v, d }
    }

    /// Re-embeds the tangent into a larger space starting at `offset`.
    pub fn lift<const M: usize>(self, offset: usize) -> Jet<M> {
        let mut d = [0.0; M];
        d[offset..offset + N].copy_from_slice(&self.d);
        Jet { v: self.v, d }
    }
}

impl<const N: usize> Add for Jet<N> {
    type Output = Self;
    #[inline]
    fn add(mut self, o: Self) -> Self {
        self.v += o.v;
        for (a, b) in self.d.iter_mut().zip(o.d.iter()) {
            *a += b;
        }
        self
    }
}

impl<const N: usize> Sub for Jet<N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, o: Self) -> Self {
        self.v -= o.v;
        for (a, b) in self.d.iter_mut().zip(o.d.iter()) {
            *a -= b;
        }
        self
    }
}

impl<const N: usize> Mul for Jet<N> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        let mut d = [0.0; N];
        for i in 0..N {
            d[i] = self.d[i] * o.v + o.d[i] * self.v;
        }
        Self { v: self.v * o.v, d }
    }
}

impl<const N: usize> Div for Jet<N> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let inv = 1.0 / o.v;
        let v = self.v * inv;
        let mut d = [0.0; N];
        for i in 0..N {
            d[i] = (self.d[i] - v * o.d[i]) * inv;
        }
        Self { v, d }
    }
}

impl<const N: usize> Neg for Jet<N> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        self.chain(-self.v, -1.0)
    }
}

impl<const N: usize> Add<f64> for Jet<N> {
    type Output = Self;
    #[inline]
    fn add(mut self, o: f64) -> Self {
        self.v += o;
        self
    }
}

impl<const N: usize> Sub<f64> for Jet<N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, o: f64) -> Self {
        self.v -= o;
        self
    }
}

impl<const N: usize> Mul<f64> for Jet<N> {
    type Output = Self;
    #[inline]
    fn mul(self, o: f64) -> Self {
        self.chain(self.v * o, o)
    }
}

impl<const N: usize> Div<f64> for Jet<N> {
    type Output = Self;
    #[inline]
    fn div(self, o: f64) -> Self {
        self * (1.0 / o)
    }
}

impl<const N: usize> AddAssign for Jet<N> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<const N: usize> SubAssign for Jet<N> {
    #[inline]
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl<const N: usize> Real for Jet<N> {
    fn cst(v: f64) -> Self {
        Self::constant(v)
    }
    fn val(&self) -> f64 {
        self.v
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        // subgradient 0 at the origin keeps zero-distance terms finite
        let ds = if s > 0.0 { 0.5 / s } else { 0.0 };
        self.chain(s, ds)
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e)
    }
    fn abs(self) -> Self {
        let s = if self.v > 0.0 {
            1.0
        } else if self.v < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.chain(self.v.abs(), s)
    }
    fn sigmoid(self) -> Self {
        let s = sigmoid_f64(self.v);
        self.chain(s, s * (1.0 - s))
    }
}

/// Minimal 3-vector over a [`Real`] scalar.
#[derive(Clone, Copy, Debug)]
pub struct V3<T>(pub [T; 3]);

impl<T: Real> V3<T> {
    pub fn new(x: T, y: T, z: T) -> Self {
        Self([x, y, z])
    }
    pub fn cst(v: &nalgebra::Vector3<f64>) -> Self {
        Self([T::cst(v.x), T::cst(v.y), T::cst(v.z)])
    }
    pub fn x(&self) -> T {
        self.0[0]
    }
    pub fn y(&self) -> T {
        self.0[1]
    }
    pub fn z(&self) -> T {
        self.0[2]
    }
    pub fn dot(&self, o: &Self) -> T {
        self.0[0] * o.0[0] + self.0[1] * o.0[1] + self.0[2] * o.0[2]
    }
    pub fn cross(&self, o: &Self) -> Self {
        let [a, b, c] = self.0;
        let [x, y, z] = o.0;
        Self([b * z - c * y, c * x - a * z, a * y - b * x])
    }
    pub fn norm(&self) -> T {
        self.dot(self).sqrt()
    }
    pub fn scale(&self, s: T) -> Self {
        Self([self.0[0] * s, self.0[1] * s, self.0[2] * s])
    }
    pub fn value(&self) -> nalgebra::Vector3<f64> {
        nalgebra::Vector3::new(self.0[0].val(), self.0[1].val(), self.0[2].val())
    }
}

impl<T: Real> Add for V3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl<T: Real> Sub for V3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

/// Minimal 2-vector over a [`Real`] scalar.
#[derive(Clone, Copy, Debug)]
pub struct V2<T>(pub [T; 2]);

impl<T: Real> V2<T> {
    pub fn new(x: T, y: T) -> Self {
        Self([x, y])
    }
    pub fn cst(v: &nalgebra::Vector2<f64>) -> Self {
        Self([T::cst(v.x), T::cst(v.y)])
    }
    pub fn dot(&self, o: &Self) -> T {
        self.0[0] * o.0[0] + self.0[1] * o.0[1]
    }
    /// z component of the 3D cross product.
    pub fn cross(&self, o: &Self) -> T {
        self.0[0] * o.0[1] - self.0[1] * o.0[0]
    }
    pub fn norm(&self) -> T {
        self.dot(self).sqrt()
    }
    pub fn value(&self) -> nalgebra::Vector2<f64> {
        nalgebra::Vector2::new(self.0[0].val(), self.0[1].val())
    }
}

impl<T: Real> Sub for V2<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self([self.0[0] - o.0[0], self.0[1] - o.0[1]])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd<F: Fn(f64) -> f64>(f: F, x: f64) -> f64 {
        let h = 1e-6;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn elementary_derivatives_match_finite_differences() {
        let x = 0.73;
        let j = Jet::<1>::var(x, 0);
        let cases: Vec<(Jet<1>, f64)> = vec![
            (j * j / (j + 2.0), fd(|x| x * x / (x + 2.0), x)),
            (Real::sqrt(j), fd(f64::sqrt, x)),
            (Real::exp(-j * 3.0), fd(|x| (-3.0 * x).exp(), x)),
            (Real::sigmoid(j * 5.0 - 1.0), fd(|x| sigmoid_f64(5.0 * x - 1.0), x)),
            (Real::abs(j - 1.0), fd(|x| (x - 1.0).abs(), x)),
        ];
        for (jet, expected) in cases {
            assert!((jet.d[0] - expected).abs() < 1e-8, "{jet:?} vs {expected}");
        }
    }

    #[test]
    fn sqrt_at_zero_is_finite() {
        let z = Real::sqrt(Jet::<2>::var(0.0, 1));
        assert_eq!(z.v, 0.0);
        assert!(z.d.iter().all(|d| d.is_finite()));
    }

    #[test]
    fn sigmoid_saturates_without_overflow() {
        assert_eq!(sigmoid_f64(-1e4), 0.0);
        assert_eq!(sigmoid_f64(1e4), 1.0);
        let s = Real::sigmoid(Jet::<1>::var(-800.0, 0));
        assert!(s.d[0].is_finite());
    }

    #[test]
    fn lift_places_tangent() {
        let j = Jet::<2> { v: 1.0, d: [3.0, 4.0] };
        let l: Jet<5> = j.lift(2);
        assert_eq!(l.d, [0.0, 0.0, 3.0, 4.0, 0.0]);
    }
}
