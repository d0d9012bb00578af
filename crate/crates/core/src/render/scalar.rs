//! Scalar abstraction so the shading chain can run on plain floats or on
//! forward-mode dual numbers.

use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::math::Vec3;

pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn cst(x: f64) -> Self;
    fn value(self) -> f64;
    fn sqrt(self) -> Self;

    /// `max(self, floor)`, treating the floor as a constant.
    fn floor_at(self, floor: f64) -> Self {
        if self.value() < floor {
            Self::cst(floor)
        } else {
            self
        }
    }
}

impl Real for f64 {
    #[inline]
    fn cst(x: f64) -> Self {
        x
    }

    #[inline]
    fn value(self) -> f64 {
        self
    }

    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
}

/// Value plus `N` directional derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<const N: usize> {
    pub v: f64,
    pub d: [f64; N],
}

impl<const N: usize> Dual<N> {
    pub fn var(v: f64, k: usize) -> Self {
        let mut d = [0.0; N];
        d[k] = 1.0;
        Self { v, d }
    }

    #[inline]
    fn map(self, v: f64, dv: f64) -> Self {
        let mut d = self.d;
        d.iter_mut().for_each(|x| *x *= dv);
        Self { v, d }
    }
}

impl<const N: usize> Real for Dual<N> {
    #[inline]
    fn cst(x: f64) -> Self {
        Self { v: x, d: [0.0; N] }
    }

    #[inline]
    fn value(self) -> f64 {
        self.v
    }

    #[inline]
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        let ds = if s > 0.0 { 0.5 / s } else { 0.0 };
        self.map(s, ds)
    }
}

impl<const N: usize> Add for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(mut self, o: Self) -> Self {
        self.v += o.v;
        for k in 0..N {
            self.d[k] += o.d[k];
        }
        self
    }
}

impl<const N: usize> Sub for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, o: Self) -> Self {
        self.v -= o.v;
        for k in 0..N {
            self.d[k] -= o.d[k];
        }
        self
    }
}

impl<const N: usize> Mul for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        let mut d = [0.0; N];
        for k in 0..N {
            d[k] = self.d[k] * o.v + self.v * o.d[k];
        }
        Self { v: self.v * o.v, d }
    }
}

impl<const N: usize> Div for Dual<N> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let inv = 1.0 / o.v;
        let q = self.v / o.v;
        let mut d = [0.0; N];
        for k in 0..N {
            d[k] = (self.d[k] - q * o.d[k]) * inv;
        }
        Self { v: q, d }
    }
}

impl<const N: usize> Neg for Dual<N> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        self.map(-self.v, -1.0)
    }
}

impl<const N: usize> Add<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(mut self, o: f64) -> Self {
        self.v += o;
        self
    }
}

impl<const N: usize> Sub<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, o: f64) -> Self {
        self.v -= o;
        self
    }
}

impl<const N: usize> Mul<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(self, o: f64) -> Self {
        self.map(self.v * o, o)
    }
}

impl<const N: usize> Div<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn div(self, o: f64) -> Self {
        let mut d = self.d;
        d.iter_mut().for_each(|x| *x /= o);
        Self { v: self.v / o, d }
    }
}

/// Minimal 3-vector over a [`Real`].
#[derive(Clone, Copy, Debug)]
pub struct V3<T>(pub [T; 3]);

impl<T: Real> V3<T> {
    pub fn from_vec(v: Vec3) -> Self {
        V3([T::cst(v.x), T::cst(v.y), T::cst(v.z)])
    }

    pub fn dot(&self, o: Vec3) -> T {
        self.0[0] * o.x + self.0[1] * o.y + self.0[2] * o.z
    }

    pub fn length(&self) -> T {
        (self.0[0] * self.0[0] + self.0[1] * self.0[1] + self.0[2] * self.0[2]).sqrt()
    }

    pub fn normalized(&self) -> Self {
        let l = self.length().floor_at(1e-12);
        V3([self.0[0] / l, self.0[1] / l, self.0[2] / l])
    }

    /// `a * x + b * y + c * z` for constant basis vectors.
    pub fn combine(basis: [Vec3; 3], c: [T; 3]) -> Self {
        let mut out = [T::cst(0.0); 3];
        for (k, b) in basis.iter().enumerate() {
            out[0] = out[0] + c[k] * b.x;
            out[1] = out[1] + c[k] * b.y;
            out[2] = out[2] + c[k] * b.z;
        }
        V3(out)
    }
}
