//! Closed-form step responses and homogeneous bases for each subspace.
//!
//! Everything is evaluated on [`Dual4`] values seeded along `(t, a, b, c)`, so a
//! single pass produces the activation and its partials. Coefficients that are
//! zero in a subspace never enter its formula, which makes their partials
//! vanish identically.
//!
//! Step responses `f` (valid for `t > 0`, zero otherwise):
//!
//! | subspace            | f(t)                                        |
//! |---------------------|---------------------------------------------|
//! | Full, overdamped    | `1/c + (r2·e^{r1 t} − r1·e^{r2 t}) / (c·(r1 − r2))` |
//! | Full, underdamped   | `(1 − e^{σt}(cos ωt − (σ/ω) sin ωt)) / c`   |
//! | Full, critical      | `(1 − e^{rt}(1 − r t)) / c`                 |
//! | NoDamping, osc.     | `(1 − cos ωt) / c`, `ω = √(c/a)`            |
//! | NoDamping, hyp.     | `(1 − cosh κt) / c`, `κ = √(−c/a)`          |
//! | NoStiffness         | `t/b − (a/b²)(1 − e^{−bt/a})`               |
//! | MassOnly            | `t² / (2a)`                                 |
//! | NoMass              | `(1 − e^{−ct/b}) / c`                       |
//! | DampingOnly         | `t / b`                                     |
//! | StiffnessOnly       | `1 / c`                                     |

use super::{DeuParams, EvalResult, KernelConfig, Regime, Structural, SubspaceId};
use crate::dual::Dual4;

const T: usize = 0;
const A: usize = 1;
const B: usize = 2;
const C: usize = 3;

/// Homogeneous basis values at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Basis {
    pub f1: f64,
    pub f2: f64,
}

struct Ctx {
    exp_limit: f64,
    clamped: bool,
}

impl Ctx {
    #[inline]
    fn exp(&mut self, arg: Dual4) -> Dual4 {
        let (arg, hit) = arg.clamp_sym(self.exp_limit);
        self.clamped |= hit;
        arg.exp()
    }

    /// `(cosh x, sinh x)` built from clamped exponentials.
    #[inline]
    fn cosh_sinh(&mut self, x: Dual4) -> (Dual4, Dual4) {
        let ep = self.exp(x);
        let em = self.exp(-x);
        ((ep + em) * 0.5, (ep - em) * 0.5)
    }
}

/// Step response and homogeneous basis as duals. `f` is only meaningful for
/// `t > 0`; callers apply the step themselves.
struct Parts {
    f: Dual4,
    f1: Dual4,
    f2: Dual4,
}

fn parts(p: &DeuParams, id: SubspaceId, t: f64, ctx: &mut Ctx) -> Parts {
    let t = Dual4::variable(t, T);
    let a = Dual4::variable(p.a, A);
    let b = Dual4::variable(p.b, B);
    let c = Dual4::variable(p.c, C);
    let zero = Dual4::constant(0.0);
    let one = Dual4::constant(1.0);

    match (id.structural, id.regime) {
        (Structural::Full, Regime::Overdamped) => {
            let sqrt_disc = (b * b - 4.0 * a * c).sqrt();
            let two_a = a * 2.0;
            let ra = (-b + sqrt_disc) / two_a;
            let rb = (-b - sqrt_disc) / two_a;
            let (r1, r2) = if ra.re >= rb.re { (ra, rb) } else { (rb, ra) };
            let e1 = ctx.exp(r1 * t);
            let e2 = ctx.exp(r2 * t);
            let f = c.recip() + (r2 * e1 - r1 * e2) / (c * (r1 - r2));
            Parts { f, f1: e1, f2: e2 }
        }
        (Structural::Full, Regime::Underdamped) => {
            let two_a = a * 2.0;
            let sigma = -b / two_a;
            let omega = (4.0 * a * c - b * b).sqrt() / two_a;
            let env = ctx.exp(sigma * t);
            let wt = omega * t;
            let f1 = env * wt.cos();
            let f2 = env * wt.sin();
            let f = (1.0 - f1 + (sigma / omega) * f2) / c;
            Parts { f, f1, f2 }
        }
        (Structural::Full, Regime::Critical) => {
            let r = -b / (a * 2.0);
            let e = ctx.exp(r * t);
            let f2 = t * e;
            let f = (1.0 - e + r * f2) / c;
            Parts { f, f1: e, f2 }
        }
        (Structural::NoDamping, Regime::Hyperbolic) => {
            let kappa = (-c / a).sqrt();
            let (ch, sh) = ctx.cosh_sinh(kappa * t);
            let f = (1.0 - ch) / c;
            Parts { f, f1: ch, f2: sh }
        }
        (Structural::NoDamping, _) => {
            let omega = (c / a).sqrt();
            let wt = omega * t;
            let f1 = wt.cos();
            let f = (1.0 - f1) / c;
            Parts {
                f,
                f1,
                f2: wt.sin(),
            }
        }
        (Structural::NoStiffness, _) => {
            let decay = ctx.exp(-(b / a) * t);
            let f = t / b - (a / (b * b)) * (1.0 - decay);
            Parts {
                f,
                f1: one,
                f2: decay,
            }
        }
        (Structural::MassOnly, _) => Parts {
            f: t * t / (a * 2.0),
            f1: t,
            f2: one,
        },
        (Structural::NoMass, _) => {
            let decay = ctx.exp(-(c / b) * t);
            Parts {
                f: (1.0 - decay) / c,
                f1: decay,
                f2: zero,
            }
        }
        (Structural::DampingOnly, _) => Parts {
            f: t / b,
            f1: one,
            f2: zero,
        },
        (Structural::StiffnessOnly, _) => Parts {
            f: c.recip(),
            f1: zero,
            f2: zero,
        },
        (Structural::Full, _) => unreachable!("regime checked by check_resolved"),
    }
}

#[inline]
fn clamp_out(v: f64, limit: f64, clamped: &mut bool) -> f64 {
    if v > limit {
        *clamped = true;
        limit
    } else if v < -limit {
        *clamped = true;
        -limit
    } else {
        v
    }
}

pub(super) fn basis(p: &DeuParams, id: SubspaceId, t: f64, cfg: &KernelConfig) -> (Basis, bool) {
    let mut ctx = Ctx {
        exp_limit: cfg.exp_arg_clamp,
        clamped: false,
    };
    let parts = parts(p, id, t, &mut ctx);
    let mut clamped = ctx.clamped;
    let lim = cfg.output_clamp;
    (
        Basis {
            f1: clamp_out(parts.f1.re, lim, &mut clamped),
            f2: clamp_out(parts.f2.re, lim, &mut clamped),
        },
        clamped,
    )
}

pub(super) fn evaluate(
    p: &DeuParams,
    id: SubspaceId,
    t: f64,
    cfg: &KernelConfig,
) -> (EvalResult, bool) {
    let mut ctx = Ctx {
        exp_limit: cfg.exp_arg_clamp,
        clamped: false,
    };
    let Parts { f, f1, f2 } = parts(p, id, t, &mut ctx);
    // u(t) = 1 only for t > 0.
    let forced = if t > 0.0 { f } else { Dual4::constant(0.0) };
    let y = forced + f1 * p.c1 + f2 * p.c2;

    let lim = cfg.output_clamp;
    let mut clamped = ctx.clamped;
    let mut out = |v: f64| clamp_out(v, lim, &mut clamped);
    let result = EvalResult {
        y: out(y.re),
        dy_dt: out(y.eps[T]),
        dy_da: out(y.eps[A]),
        dy_db: out(y.eps[B]),
        dy_dc: out(y.eps[C]),
        dy_dc1: out(f1.re),
        dy_dc2: out(f2.re),
    };
    (result, clamped)
}
