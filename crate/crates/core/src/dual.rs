//! Forward-mode dual numbers carrying one tangent per model parameter.
//!
//! The simulation, moment and loss code is generic over [`Scalar`], so one
//! implementation yields both plain values (`f64`) and exact pathwise
//! derivatives ([`Dual`]) under fixed noise.

use crate::dsl::MAX_PARAMS;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

/// Lower clamp applied to `log` arguments.
pub const LOG_FLOOR: f64 = 1e-12;

pub trait Scalar:
    Copy
    + std::fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + Send
    + Sync
{
    fn cst(x: f64) -> Self;
    fn re(&self) -> f64;
    fn scale(self, k: f64) -> Self;
    /// `sqrt(max(x, 0))`.
    fn sqrt_clamped(self) -> Self;
    /// `ln(max(x, 1e-12))`.
    fn ln_clamped(self) -> Self;
    fn exp(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tanh(self) -> Self;
    fn abs(self) -> Self;
    /// `x^y`; a negative base with a non-integer exponent is clamped to 0.
    fn pow(self, y: Self) -> Self;
    fn max(self, other: Self) -> Self {
        if self.re() >= other.re() {
            self
        } else {
            other
        }
    }
    fn min(self, other: Self) -> Self {
        if self.re() <= other.re() {
            self
        } else {
            other
        }
    }
    fn powi(self, n: i32) -> Self;
}

fn pow_base(x: f64, y: f64) -> f64 {
    if x < 0.0 && y.fract() != 0.0 {
        0.0
    } else {
        x
    }
}

impl Scalar for f64 {
    fn cst(x: f64) -> Self {
        x
    }
    fn re(&self) -> f64 {
        *self
    }
    fn scale(self, k: f64) -> Self {
        self * k
    }
    fn sqrt_clamped(self) -> Self {
        self.max(0.0).sqrt()
    }
    fn ln_clamped(self) -> Self {
        self.max(LOG_FLOOR).ln()
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn pow(self, y: Self) -> Self {
        pow_base(self, y).powf(y)
    }
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
}

/// Value plus gradient with respect to up to [`MAX_PARAMS`] seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub re: f64,
    pub eps: [f64; MAX_PARAMS],
}

impl Dual {
    pub fn constant(re: f64) -> Dual {
        Dual {
            re,
            eps: [0.0; MAX_PARAMS],
        }
    }

    /// Independent variable `index` with unit tangent.
    pub fn variable(re: f64, index: usize) -> Dual {
        let mut d = Dual::constant(re);
        d.eps[index] = 1.0;
        d
    }

    /// Seeds one variable per entry of `values`.
    pub fn seed(values: &[f64]) -> Vec<Dual> {
        assert!(values.len() <= MAX_PARAMS, "too many parameters for Dual");
        values
            .iter()
            .enumerate()
            .map(|(i, v)| Dual::variable(*v, i))
            .collect()
    }

    pub fn gradient(&self, n: usize) -> Vec<f64> {
        self.eps[..n].to_vec()
    }

    /// Applies a unary function with value `f` and derivative `df` at `self.re`.
    #[inline]
    fn chain(self, f: f64, df: f64) -> Dual {
        let mut eps = self.eps;
        for e in eps.iter_mut() {
            *e *= df;
        }
        Dual { re: f, eps }
    }
}

impl Add for Dual {
    type Output = Dual;
    #[inline]
    fn add(self, rhs: Dual) -> Dual {
        let mut eps = self.eps;
        for (a, b) in eps.iter_mut().zip(rhs.eps.iter()) {
            *a += b;
        }
        Dual {
            re: self.re + rhs.re,
            eps,
        }
    }
}

impl AddAssign for Dual {
    #[inline]
    fn add_assign(&mut self, rhs: Dual) {
        *self = *self + rhs;
    }
}

impl Sub for Dual {
    type Output = Dual;
    #[inline]
    fn sub(self, rhs: Dual) -> Dual {
        let mut eps = self.eps;
        for (a, b) in eps.iter_mut().zip(rhs.eps.iter()) {
            *a -= b;
        }
        Dual {
            re: self.re - rhs.re,
            eps,
        }
    }
}

impl Mul for Dual {
    type Output = Dual;
    #[inline]
    fn mul(self, rhs: Dual) -> Dual {
        let mut eps = [0.0; MAX_PARAMS];
        for i in 0..MAX_PARAMS {
            eps[i] = self.eps[i] * rhs.re + self.re * rhs.eps[i];
        }
        Dual {
            re: self.re * rhs.re,
            eps,
        }
    }
}

impl Div for Dual {
    type Output = Dual;
    #[inline]
    fn div(self, rhs: Dual) -> Dual {
        let re = self.re / rhs.re;
        let inv = 1.0 / rhs.re;
        let mut eps = [0.0; MAX_PARAMS];
        for i in 0..MAX_PARAMS {
            eps[i] = (self.eps[i] - re * rhs.eps[i]) * inv;
        }
        Dual { re, eps }
    }
}

impl Neg for Dual {
    type Output = Dual;
    #[inline]
    fn neg(self) -> Dual {
        self.chain(-self.re, -1.0)
    }
}

impl Scalar for Dual {
    fn cst(x: f64) -> Self {
        Dual::constant(x)
    }
    fn re(&self) -> f64 {
        self.re
    }
    fn scale(self, k: f64) -> Self {
        self.chain(self.re * k, k)
    }
    fn sqrt_clamped(self) -> Self {
        if self.re <= 0.0 {
            return Dual::constant(0.0);
        }
        let s = self.re.sqrt();
        self.chain(s, 0.5 / s)
    }
    fn ln_clamped(self) -> Self {
        if self.re < LOG_FLOOR {
            return Dual::constant(LOG_FLOOR.ln());
        }
        self.chain(self.re.ln(), 1.0 / self.re)
    }
    fn exp(self) -> Self {
        let e = self.re.exp();
        self.chain(e, e)
    }
    fn sin(self) -> Self {
        self.chain(self.re.sin(), self.re.cos())
    }
    fn cos(self) -> Self {
        self.chain(self.re.cos(), -self.re.sin())
    }
    fn tanh(self) -> Self {
        let t = self.re.tanh();
        self.chain(t, 1.0 - t * t)
    }
    fn abs(self) -> Self {
        if self.re < 0.0 {
            -self
        } else {
            self
        }
    }
    fn pow(self, y: Self) -> Self {
        let base = pow_base(self.re, y.re);
        let value = base.powf(y.re);
        if base == 0.0 && self.re != 0.0 {
            return Dual::constant(value);
        }
        // d(x^y) = y x^(y-1) dx + ln(x) x^y dy
        let dx = if base == 0.0 && y.re < 1.0 {
            0.0
        } else {
            y.re * base.powf(y.re - 1.0)
        };
        let dy = if base > 0.0 { base.ln() * value } else { 0.0 };
        let mut eps = [0.0; MAX_PARAMS];
        for i in 0..MAX_PARAMS {
            eps[i] = dx * self.eps[i] + dy * y.eps[i];
        }
        Dual { re: value, eps }
    }
    fn powi(self, n: i32) -> Self {
        let v = self.re.powi(n);
        let d = if n == 0 {
            0.0
        } else {
            n as f64 * self.re.powi(n - 1)
        };
        self.chain(v, d)
    }
}
