//! Forward-mode scalars.
//!
//! The residual pipeline in [`crate::linearize`] is written once, generically
//! over [`Real`], and evaluated either with plain `f64` (nonlinear residuals)
//! or with multi-lane dual numbers (exact Jacobian columns). Finite-difference
//! differencing of the residual was tried first and rejected: the 1/h-scaled
//! stencils amplify the cancellation noise and the resulting kernel singular
//! values *grow* under grid refinement, which ruins the rank decision the
//! solver is built around.

use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

/// Arithmetic interface shared by `f64` and dual numbers.
///
/// `primal` deliberately exposes the value part: branch decisions (orientation
/// signs, admittance checks) must be taken on the primal trajectory so that
/// the derivative stays consistent on either side of the branch.
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    fn lit(x: f64) -> Self;
    fn primal(self) -> f64;
    fn sqrt(self) -> Self;
    /// Multiply by a plain constant (cheaper than `self * Self::lit(s)`).
    fn scale(self, s: f64) -> Self;
    fn recip(self) -> Self;
    fn zero() -> Self {
        Self::lit(0.0)
    }
    fn one() -> Self {
        Self::lit(1.0)
    }
}

impl Real for f64 {
    #[inline]
    fn lit(x: f64) -> Self {
        x
    }
    #[inline]
    fn primal(self) -> f64 {
        self
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn scale(self, s: f64) -> Self {
        self * s
    }
    #[inline]
    fn recip(self) -> Self {
        1.0 / self
    }
}

/// Dual number with `K` independent derivative lanes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<const K: usize> {
    pub v: f64,
    pub d: [f64; K],
}

impl<const K: usize> Dual<K> {
    #[inline]
    pub fn constant(v: f64) -> Self {
        Dual { v, d: [0.0; K] }
    }

    /// Value `v` with a unit seed in lane `lane`.
    #[inline]
    pub fn seeded(v: f64, lane: usize) -> Self {
        let mut d = [0.0; K];
        d[lane] = 1.0;
        Dual { v, d }
    }
}

impl<const K: usize> Add for Dual<K> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        let mut d = self.d;
        for (a, b) in d.iter_mut().zip(rhs.d.iter()) {
            *a += b;
        }
        Dual { v: self.v + rhs.v, d }
    }
}

impl<const K: usize> Sub for Dual<K> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        let mut d = self.d;
        for (a, b) in d.iter_mut().zip(rhs.d.iter()) {
            *a -= b;
        }
        Dual { v: self.v - rhs.v, d }
    }
}

impl<const K: usize> Mul for Dual<K> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        let mut d = [0.0; K];
        for i in 0..K {
            d[i] = self.d[i] * rhs.v + self.v * rhs.d[i];
        }
        Dual { v: self.v * rhs.v, d }
    }
}

impl<const K: usize> Div for Dual<K> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let inv = 1.0 / rhs.v;
        let q = self.v * inv;
        let mut d = [0.0; K];
        for i in 0..K {
            d[i] = (self.d[i] - q * rhs.d[i]) * inv;
        }
        Dual { v: q, d }
    }
}

impl<const K: usize> Neg for Dual<K> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        let mut d = self.d;
        for a in d.iter_mut() {
            *a = -*a;
        }
        Dual { v: -self.v, d }
    }
}

impl<const K: usize> AddAssign for Dual<K> {
    #[inline]
    fn add_assign(&mut self, rhs: Self) {
        self.v += rhs.v;
        for (a, b) in self.d.iter_mut().zip(rhs.d.iter()) {
            *a += b;
        }
    }
}

impl<const K: usize> SubAssign for Dual<K> {
    #[inline]
    fn sub_assign(&mut self, rhs: Self) {
        self.v -= rhs.v;
        for (a, b) in self.d.iter_mut().zip(rhs.d.iter()) {
            *a -= b;
        }
    }
}

impl<const K: usize> MulAssign for Dual<K> {
    #[inline]
    fn mul_assign(&mut self, rhs: Self) {
        *self = *self * rhs;
    }
}

impl<const K: usize> Real for Dual<K> {
    #[inline]
    fn lit(x: f64) -> Self {
        Dual::constant(x)
    }
    #[inline]
    fn primal(self) -> f64 {
        self.v
    }
    #[inline]
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        let half_inv = 0.5 / s;
        let mut d = self.d;
        for a in d.iter_mut() {
            *a *= half_inv;
        }
        Dual { v: s, d }
    }
    #[inline]
    fn scale(self, s: f64) -> Self {
        let mut d = self.d;
        for a in d.iter_mut() {
            *a *= s;
        }
        Dual { v: self.v * s, d }
    }
    #[inline]
    fn recip(self) -> Self {
        let inv = 1.0 / self.v;
        let m = -inv * inv;
        let mut d = self.d;
        for a in d.iter_mut() {
            *a *= m;
        }
        Dual { v: inv, d }
    }
}

/// 3-vector helpers over any `Real`.
pub mod vec3 {
    use super::Real;

    #[inline]
    pub fn dot<T: Real>(a: [T; 3], b: [T; 3]) -> T {
        a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
    }

    #[inline]
    pub fn cross<T: Real>(a: [T; 3], b: [T; 3]) -> [T; 3] {
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    }

    #[inline]
    pub fn add<T: Real>(a: [T; 3], b: [T; 3]) -> [T; 3] {
        [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
    }

    #[inline]
    pub fn sub<T: Real>(a: [T; 3], b: [T; 3]) -> [T; 3] {
        [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
    }

    #[inline]
    pub fn scale<T: Real>(a: [T; 3], s: T) -> [T; 3] {
        [a[0] * s, a[1] * s, a[2] * s]
    }

    #[inline]
    pub fn lift<T: Real>(a: [f64; 3]) -> [T; 3] {
        [T::lit(a[0]), T::lit(a[1]), T::lit(a[2])]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dual_matches_finite_difference() {
        // f(x) = sqrt(x^2 + 3/x) at x = 1.7
        let f = |x: f64| (x * x + 3.0 / x).sqrt();
        let x = 1.7_f64;
        let d: Dual<1> = Dual::seeded(x, 0);
        let y = (d * d + Dual::lit(3.0) / d).sqrt();
        let h = 1e-6;
        let fd = (f(x + h) - f(x - h)) / (2.0 * h);
        assert!((y.v - f(x)).abs() < 1e-15);
        assert!((y.d[0] - fd).abs() < 1e-8, "{} vs {}", y.d[0], fd);
    }

    #[test]
    fn lanes_are_independent() {
        let a: Dual<2> = Dual::seeded(2.0, 0);
        let b: Dual<2> = Dual::seeded(3.0, 1);
        let p = a * b;
        assert_eq!(p.v, 6.0);
        assert_eq!(p.d, [3.0, 2.0]);
    }

    #[test]
    fn recip_and_scale() {
        let a: Dual<1> = Dual::seeded(4.0, 0);
        let r = a.recip();
        assert!((r.v - 0.25).abs() < 1e-15);
        assert!((r.d[0] + 1.0 / 16.0).abs() < 1e-15);
        let s = a.scale(2.5);
        assert_eq!(s.v, 10.0);
        assert_eq!(s.d[0], 2.5);
    }
}
