//! Truncated third-order Taylor polynomials in three variables.
//!
//! A [`Jet`] carries a function value together with all of its partial
//! derivatives up to third order with respect to a point `(x, y, z)`.
//! Arithmetic on jets propagates the derivatives exactly (to rounding), which
//! lets the analytic electrode model produce gradients, Hessians and third
//! derivatives without finite differences.

use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::num::{lit, Mat3, Real, Vec3};

const N: usize = 20;

/// Exponent triples of every monomial of total degree <= 3, graded order.
const EXPONENTS: [[u8; 3]; N] = [
    [0, 0, 0],
    [1, 0, 0],
    [0, 1, 0],
    [0, 0, 1],
    [2, 0, 0],
    [1, 1, 0],
    [1, 0, 1],
    [0, 2, 0],
    [0, 1, 1],
    [0, 0, 2],
    [3, 0, 0],
    [2, 1, 0],
    [2, 0, 1],
    [1, 2, 0],
    [1, 1, 1],
    [1, 0, 2],
    [0, 3, 0],
    [0, 2, 1],
    [0, 1, 2],
    [0, 0, 3],
];

const fn index_of(e: [u8; 3]) -> usize {
    let mut i = 0;
    while i < N {
        let x = EXPONENTS[i];
        if x[0] == e[0] && x[1] == e[1] && x[2] == e[2] {
            return i;
        }
        i += 1;
    }
    usize::MAX
}

const fn degree(i: usize) -> u8 {
    EXPONENTS[i][0] + EXPONENTS[i][1] + EXPONENTS[i][2]
}

/// `PRODUCT[i][j]` is the index of monomial `i * j`, or `usize::MAX` when the
/// product falls outside the truncation.
const PRODUCT: [[usize; N]; N] = {
    let mut t = [[usize::MAX; N]; N];
    let mut i = 0;
    while i < N {
        let mut j = 0;
        while j < N {
            if degree(i) + degree(j) <= 3 {
                let a = EXPONENTS[i];
                let b = EXPONENTS[j];
                t[i][j] = index_of([a[0] + b[0], a[1] + b[1], a[2] + b[2]]);
            }
            j += 1;
        }
        i += 1;
    }
    t
};

fn factorial(n: u8) -> f64 {
    (1..=n).map(f64::from).product()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet<T> {
    /// Taylor coefficients `∂^α f / α!`, indexed like `EXPONENTS`.
    c: [T; N],
}

impl<T: Real> Jet<T> {
    pub fn constant(v: T) -> Self {
        let mut c = [T::zero(); N];
        c[0] = v;
        Self { c }
    }

    /// The coordinate function for axis `axis` evaluated at `v`.
    pub fn variable(v: T, axis: usize) -> Self {
        let mut j = Self::constant(v);
        j.c[1 + axis] = T::one();
        j
    }

    /// Jets for `x`, `y`, `z` at `p`.
    pub fn point(p: &Vec3<T>) -> [Self; 3] {
        [Self::variable(p[0], 0), Self::variable(p[1], 1), Self::variable(p[2], 2)]
    }

    pub fn value(&self) -> T {
        self.c[0]
    }

    pub fn gradient(&self) -> Vec3<T> {
        Vec3::new(self.c[1], self.c[2], self.c[3])
    }

    pub fn hessian(&self) -> Mat3<T> {
        Mat3::from_fn(|i, j| self.derivative(&[i, j]))
    }

    /// Third derivatives, `third[i][(j, k)] = ∂i ∂j ∂k f`.
    pub fn third(&self) -> [Mat3<T>; 3] {
        [0, 1, 2].map(|i| Mat3::from_fn(|j, k| self.derivative(&[i, j, k])))
    }

    /// Mixed partial derivative along the listed axes (order <= 3).
    pub fn derivative(&self, axes: &[usize]) -> T {
        let mut e = [0u8; 3];
        for &a in axes {
            e[a] += 1;
        }
        let i = index_of(e);
        assert!(i != usize::MAX, "derivative order above 3");
        let weight = factorial(e[0]) * factorial(e[1]) * factorial(e[2]);
        self.c[i] * lit(weight)
    }

    pub fn scale(mut self, s: T) -> Self {
        for c in self.c.iter_mut() {
            *c *= s;
        }
        self
    }

    /// `f(self)` given `f` and its first three derivatives at `self.value()`.
    fn compose(&self, f: [T; 4]) -> Self {
        let mut d = *self;
        d.c[0] = T::zero();
        let d2 = d * d;
        let d3 = d2 * d;
        let half: T = lit(0.5);
        let sixth: T = lit(1.0 / 6.0);
        let mut out = d.scale(f[1]) + d2.scale(f[2] * half) + d3.scale(f[3] * sixth);
        out.c[0] = f[0];
        out
    }

    pub fn recip(&self) -> Self {
        let x = self.c[0];
        let r = T::one() / x;
        let r2 = r * r;
        let two: T = lit(2.0);
        let six: T = lit(6.0);
        self.compose([r, -r2, two * r2 * r, -six * r2 * r2])
    }

    pub fn sqrt(&self) -> Self {
        let x = self.c[0];
        let s = x.sqrt();
        let d1 = lit::<T>(0.5) / s;
        let d2 = -lit::<T>(0.25) / (s * x);
        let d3 = lit::<T>(0.375) / (s * x * x);
        self.compose([s, d1, d2, d3])
    }

    pub fn atan(&self) -> Self {
        let x = self.c[0];
        let w = T::one() / (T::one() + x * x);
        let two: T = lit(2.0);
        let six: T = lit(6.0);
        self.compose([x.atan(), w, -two * x * w * w, (six * x * x - two) * w * w * w])
    }
}

impl<T: Real> Add for Jet<T> {
    type Output = Self;
    fn add(mut self, rhs: Self) -> Self {
        for (a, b) in self.c.iter_mut().zip(rhs.c) {
            *a += b;
        }
        self
    }
}

impl<T: Real> Sub for Jet<T> {
    type Output = Self;
    fn sub(mut self, rhs: Self) -> Self {
        for (a, b) in self.c.iter_mut().zip(rhs.c) {
            *a -= b;
        }
        self
    }
}

impl<T: Real> Neg for Jet<T> {
    type Output = Self;
    fn neg(self) -> Self {
        self.scale(-T::one())
    }
}

impl<T: Real> Mul for Jet<T> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let mut c = [T::zero(); N];
        for i in 0..N {
            let a = self.c[i];
            if a == T::zero() {
                continue;
            }
            for j in 0..N {
                let k = PRODUCT[i][j];
                if k != usize::MAX {
                    c[k] += a * rhs.c[j];
                }
            }
        }
        Self { c }
    }
}

// Division is multiplication by the series reciprocal.
#[allow(clippy::suspicious_arithmetic_impl)]
impl<T: Real> Div for Jet<T> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        self * rhs.recip()
    }
}

impl<T: Real> Add<T> for Jet<T> {
    type Output = Self;
    fn add(mut self, rhs: T) -> Self {
        self.c[0] += rhs;
        self
    }
}

impl<T: Real> Sub<T> for Jet<T> {
    type Output = Self;
    fn sub(mut self, rhs: T) -> Self {
        self.c[0] -= rhs;
        self
    }
}

impl<T: Real> Mul<T> for Jet<T> {
    type Output = Self;
    fn mul(self, rhs: T) -> Self {
        self.scale(rhs)
    }
}
