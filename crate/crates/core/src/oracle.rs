//! Numerical reference solutions for `a·y'' + b·y' + c·y = u(t)`.
//!
//! Nothing here is used on the training path. These routines exist to certify
//! the closed forms in [`crate::kernel`] independently: a fixed-step RK4
//! integrator and a finite-difference ODE residual.

use crate::error::{Error, Result};
use crate::kernel::{self, DeuParams, EvalResult, KernelConfig, SubspaceId};

/// Step used for the central difference of `dy/dt` in residual scans.
pub const RESIDUAL_FD_STEP: f64 = 1e-4;

#[inline]
fn heaviside(t: f64) -> f64 {
    if t > 0.0 {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IvpSpec {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub t0: f64,
    pub y0: f64,
    /// Ignored for first-order and algebraic problems.
    pub yprime0: f64,
    pub t_end: f64,
    pub step: f64,
}

impl IvpSpec {
    /// Number of steps, after checking that the grid is well formed.
    fn steps(&self) -> Result<usize> {
        let finite = [
            self.a,
            self.b,
            self.c,
            self.t0,
            self.y0,
            self.yprime0,
            self.t_end,
            self.step,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidSpec("non-finite field".into()));
        }
        if self.step <= 0.0 {
            return Err(Error::InvalidSpec(format!(
                "step must be positive, got {}",
                self.step
            )));
        }
        if self.a == 0.0 && self.b == 0.0 && self.c == 0.0 {
            return Err(Error::InvalidSpec("a, b and c are all zero".into()));
        }
        let span = (self.t_end - self.t0).abs();
        let n = (span / self.step).round();
        if (n * self.step - span).abs() > 1e-9 * span.max(1.0) {
            return Err(Error::InvalidSpec(format!(
                "step {} does not divide the interval length {span}",
                self.step
            )));
        }
        let lo = self.t0.min(self.t_end);
        let hi = self.t0.max(self.t_end);
        if lo < 0.0 && hi > 0.0 {
            let k = (self.t0 / self.step).abs();
            if (k - k.round()).abs() > 1e-6 {
                return Err(Error::InvalidSpec(format!(
                    "t = 0 does not fall on a step boundary (offset {k} steps from t0)"
                )));
            }
        }
        Ok(n as usize)
    }
}

/// Integrate the IVP on its grid with classic RK4, returning `(t, y)` at every
/// grid point including both ends.
///
/// The forcing is held at its value inside each step, so the jump at `t = 0`
/// lands exactly on a step boundary and never straddles one.
pub fn integrate(spec: &IvpSpec) -> Result<Vec<(f64, f64)>> {
    let n = spec.steps()?;
    let dir = if spec.t_end >= spec.t0 { 1.0 } else { -1.0 };
    let h = dir * spec.step;
    let t_at = |i: usize| {
        if i == n {
            spec.t_end
        } else {
            spec.t0 + i as f64 * h
        }
    };
    let mut out = Vec::with_capacity(n + 1);
    let IvpSpec { a, b, c, .. } = *spec;

    if a == 0.0 && b == 0.0 {
        for i in 0..=n {
            let t = t_at(i);
            out.push((t, heaviside(t) / c));
        }
        return Ok(out);
    }

    if a == 0.0 {
        let mut y = spec.y0;
        out.push((spec.t0, y));
        for i in 0..n {
            let t = t_at(i);
            let u = heaviside(t + 0.5 * h);
            let rhs = |y: f64| (u - c * y) / b;
            let k1 = rhs(y);
            let k2 = rhs(y + 0.5 * h * k1);
            let k3 = rhs(y + 0.5 * h * k2);
            let k4 = rhs(y + h * k3);
            y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            let t_next = t_at(i + 1);
            if !y.is_finite() {
                return Err(Error::Divergence { t: t_next });
            }
            out.push((t_next, y));
        }
        return Ok(out);
    }

    let (mut y, mut v) = (spec.y0, spec.yprime0);
    out.push((spec.t0, y));
    for i in 0..n {
        let t = t_at(i);
        let u = heaviside(t + 0.5 * h);
        let accel = |y: f64, v: f64| (u - b * v - c * y) / a;
        let (k1y, k1v) = (v, accel(y, v));
        let (y2, v2) = (y + 0.5 * h * k1y, v + 0.5 * h * k1v);
        let (k2y, k2v) = (v2, accel(y2, v2));
        let (y3, v3) = (y + 0.5 * h * k2y, v + 0.5 * h * k2v);
        let (k3y, k3v) = (v3, accel(y3, v3));
        let (y4, v4) = (y + h * k3y, v + h * k3v);
        let (k4y, k4v) = (v4, accel(y4, v4));
        y += h / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y);
        v += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
        let t_next = t_at(i + 1);
        if !(y.is_finite() && v.is_finite()) {
            return Err(Error::Divergence { t: t_next });
        }
        out.push((t_next, y));
    }
    Ok(out)
}

/// One point of a residual scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualPoint {
    pub t: f64,
    pub y: f64,
    pub residual: f64,
}

/// ODE residual of an arbitrary evaluator at every grid point.
///
/// `y''` is the central difference of the evaluator's `dy_dt`; `y'` is `dy_dt`.
pub fn residual_profile<F>(
    a: f64,
    b: f64,
    c: f64,
    grid: &[f64],
    eval: F,
) -> Result<Vec<ResidualPoint>>
where
    F: Fn(f64) -> Result<EvalResult>,
{
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let h = RESIDUAL_FD_STEP;
    grid.iter()
        .map(|&t| {
            if t.abs() < 10.0 * h {
                return Err(Error::InvalidInput(format!(
                    "grid point {t} is within {} of the forcing jump",
                    10.0 * h
                )));
            }
            let mid = eval(t)?;
            let ypp = (eval(t + h)?.dy_dt - eval(t - h)?.dy_dt) / (2.0 * h);
            let residual = (a * ypp + b * mid.dy_dt + c * mid.y - heaviside(t)).abs();
            Ok(ResidualPoint {
                t,
                y: mid.y,
                residual,
            })
        })
        .collect()
}

/// Largest absolute ODE residual of the kernel's solution over `grid`.
pub fn residual_scan(
    p: &DeuParams,
    id: SubspaceId,
    grid: &[f64],
    cfg: &KernelConfig,
) -> Result<f64> {
    let profile = residual_profile(p.a, p.b, p.c, grid, |t| kernel::eval(p, id, t, cfg))?;
    Ok(profile.iter().map(|r| r.residual).fold(0.0, f64::max))
}
