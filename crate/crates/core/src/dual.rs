//! Forward-mode dual numbers with a fixed number of infinitesimal directions.
//!
//! The kernel evaluates every closed form once on [`Dual4`] values seeded along
//! `t`, `a`, `b` and `c`, which yields the activation value and all four partials
//! in one pass without any finite differencing.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

/// Number of tracked directions.
pub const DIRS: usize = 4;

/// A value together with its gradient along [`DIRS`] directions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual4 {
    pub re: f64,
    pub eps: [f64; DIRS],
}

impl Dual4 {
    pub const fn constant(re: f64) -> Self {
        Dual4 {
            re,
            eps: [0.0; DIRS],
        }
    }

    /// A variable seeded along direction `dir`.
    pub fn variable(re: f64, dir: usize) -> Self {
        let mut eps = [0.0; DIRS];
        eps[dir] = 1.0;
        Dual4 { re, eps }
    }

    #[inline]
    fn chain(self, re: f64, deriv: f64) -> Self {
        let mut eps = self.eps;
        for e in &mut eps {
            *e *= deriv;
        }
        Dual4 { re, eps }
    }

    #[inline]
    pub fn exp(self) -> Self {
        let e = self.re.exp();
        self.chain(e, e)
    }

    #[inline]
    pub fn sin(self) -> Self {
        let (s, c) = self.re.sin_cos();
        self.chain(s, c)
    }

    #[inline]
    pub fn cos(self) -> Self {
        let (s, c) = self.re.sin_cos();
        self.chain(c, -s)
    }

    #[inline]
    pub fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        self.chain(s, 0.5 / s)
    }

    #[inline]
    pub fn recip(self) -> Self {
        let r = 1.0 / self.re;
        self.chain(r, -r * r)
    }

    #[inline]
    pub fn square(self) -> Self {
        self * self
    }

    /// Clamp the value to `[-limit, limit]`; the gradient vanishes where clamped.
    #[inline]
    pub fn clamp_sym(self, limit: f64) -> (Self, bool) {
        if self.re > limit {
            (Dual4::constant(limit), true)
        } else if self.re < -limit {
            (Dual4::constant(-limit), true)
        } else {
            (self, false)
        }
    }

    #[inline]
    pub fn scale(self, k: f64) -> Self {
        self.chain(self.re * k, k)
    }
}

impl From<f64> for Dual4 {
    fn from(re: f64) -> Self {
        Dual4::constant(re)
    }
}

impl Add for Dual4 {
    type Output = Dual4;
    #[inline]
    fn add(self, rhs: Dual4) -> Dual4 {
        let mut eps = self.eps;
        for (e, r) in eps.iter_mut().zip(rhs.eps) {
            *e += r;
        }
        Dual4 {
            re: self.re + rhs.re,
            eps,
        }
    }
}

impl AddAssign for Dual4 {
    #[inline]
    fn add_assign(&mut self, rhs: Dual4) {
        *self = *self + rhs;
    }
}

impl Sub for Dual4 {
    type Output = Dual4;
    #[inline]
    fn sub(self, rhs: Dual4) -> Dual4 {
        let mut eps = self.eps;
        for (e, r) in eps.iter_mut().zip(rhs.eps) {
            *e -= r;
        }
        Dual4 {
            re: self.re - rhs.re,
            eps,
        }
    }
}

impl Mul for Dual4 {
    type Output = Dual4;
    #[inline]
    fn mul(self, rhs: Dual4) -> Dual4 {
        let mut eps = [0.0; DIRS];
        for (i, e) in eps.iter_mut().enumerate() {
            *e = self.eps[i] * rhs.re + self.re * rhs.eps[i];
        }
        Dual4 {
            re: self.re * rhs.re,
            eps,
        }
    }
}

impl Div for Dual4 {
    type Output = Dual4;
    #[inline]
    fn div(self, rhs: Dual4) -> Dual4 {
        let re = self.re / rhs.re;
        let mut eps = [0.0; DIRS];
        for (i, e) in eps.iter_mut().enumerate() {
            *e = (self.eps[i] - re * rhs.eps[i]) / rhs.re;
        }
        Dual4 { re, eps }
    }
}

impl Neg for Dual4 {
    type Output = Dual4;
    #[inline]
    fn neg(self) -> Dual4 {
        self.chain(-self.re, -1.0)
    }
}

impl Add<f64> for Dual4 {
    type Output = Dual4;
    #[inline]
    fn add(self, rhs: f64) -> Dual4 {
        Dual4 {
            re: self.re + rhs,
            eps: self.eps,
        }
    }
}

impl Sub<f64> for Dual4 {
    type Output = Dual4;
    #[inline]
    fn sub(self, rhs: f64) -> Dual4 {
        Dual4 {
            re: self.re - rhs,
            eps: self.eps,
        }
    }
}

impl Sub<Dual4> for f64 {
    type Output = Dual4;
    #[inline]
    fn sub(self, rhs: Dual4) -> Dual4 {
        -rhs + self
    }
}

impl Mul<f64> for Dual4 {
    type Output = Dual4;
    #[inline]
    fn mul(self, rhs: f64) -> Dual4 {
        self.scale(rhs)
    }
}

impl Mul<Dual4> for f64 {
    type Output = Dual4;
    #[inline]
    fn mul(self, rhs: Dual4) -> Dual4 {
        rhs.scale(self)
    }
}

impl Div<f64> for Dual4 {
    type Output = Dual4;
    #[inline]
    fn div(self, rhs: f64) -> Dual4 {
        self.scale(1.0 / rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_and_quotient_rules() {
        let x = Dual4::variable(2.0, 0);
        let y = Dual4::variable(3.0, 1);
        let p = x * y;
        assert_eq!(p.re, 6.0);
        assert_eq!(p.eps[0], 3.0);
        assert_eq!(p.eps[1], 2.0);
        let q = x / y;
        assert!((q.eps[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((q.eps[1] + 2.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn elementary_functions() {
        let x = Dual4::variable(0.7, 2);
        assert!((x.exp().eps[2] - 0.7f64.exp()).abs() < 1e-15);
        assert!((x.sin().eps[2] - 0.7f64.cos()).abs() < 1e-15);
        assert!((x.cos().eps[2] + 0.7f64.sin()).abs() < 1e-15);
        assert!((x.sqrt().eps[2] - 0.5 / 0.7f64.sqrt()).abs() < 1e-15);
        assert!((x.recip().eps[2] + 1.0 / 0.49).abs() < 1e-12);
    }

    #[test]
    fn clamping_kills_gradient() {
        let (c, hit) = Dual4::variable(40.0, 0).clamp_sym(30.0);
        assert!(hit);
        assert_eq!(c.re, 30.0);
        assert_eq!(c.eps, [0.0; DIRS]);
        let (c, hit) = Dual4::variable(-3.0, 0).clamp_sym(30.0);
        assert!(!hit);
        assert_eq!(c.eps[0], 1.0);
    }
}
