//! Randomized certification of the kernel's closed forms.
//!
//! For every (structural, regime) pair, coefficient draws are checked three
//! ways on a uniform grid over `[-t_max, t_max]`:
//!
//! - the ODE residual from [`oracle::residual_profile`],
//! - agreement with RK4 propagated from `-t_max` using the closed form's state,
//! - every partial against a five-point central difference.
//!
//! Draws on which any clamp is active are discarded and redrawn: a clamped
//! activation deliberately stops satisfying the ODE.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::{self, DeuParams, EvalResult, KernelConfig, Regime, Structural, SubspaceId};
use crate::oracle::{self, IvpSpec};

/// Evaluator under test: returns the result and whether a clamp was hit.
pub type Evaluator =
    dyn Fn(&DeuParams, SubspaceId, f64, &KernelConfig) -> Result<(EvalResult, bool)> + Sync;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyConfig {
    pub draws_per_subspace: usize,
    pub seed: u64,
    pub kernel: KernelConfig,
    /// Coefficients are drawn from `[-coeff_range, coeff_range]`.
    pub coeff_range: f64,
    /// Minimum distance from every subspace and discriminant boundary.
    pub margin: f64,
    pub t_max: f64,
    pub grid_step: f64,
    /// Grid points closer than this to the forcing jump are skipped.
    pub exclude_radius: f64,
    pub rk4_step: f64,
    /// Finite-difference step; for `a`, `b`, `c` it is scaled by `min(1, |coefficient|)`.
    pub fd_step: f64,
    pub residual_tol: f64,
    pub rk4_rel_tol: f64,
    pub grad_rel_tol: f64,
    /// Redraw budget per accepted draw.
    pub max_attempts: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        let kernel = KernelConfig::default();
        VerifyConfig {
            draws_per_subspace: 1000,
            seed: 0,
            kernel,
            coeff_range: 2.0,
            margin: 10.0 * kernel.epsilon,
            t_max: 3.0,
            grid_step: 0.05,
            exclude_radius: 0.05,
            rk4_step: 1e-4,
            fd_step: 1e-4,
            residual_tol: 1e-3,
            rk4_rel_tol: 1e-5,
            grad_rel_tol: 1e-4,
            max_attempts: 10_000,
        }
    }
}

/// Partials in report order.
pub const PARTIALS: [&str; 6] = ["t", "a", "b", "c", "c1", "c2"];

#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceReport {
    pub id: SubspaceId,
    pub draws: usize,
    /// Draws discarded because a clamp was active.
    pub redrawn: usize,
    /// Worst `|residual| / max(1, |y|)`.
    pub worst_residual: f64,
    /// Worst `|y_rk4 - y| / max(1, |y|)`.
    pub worst_rk4: f64,
    /// Worst relative error per partial, in [`PARTIALS`] order.
    pub worst_grad: [f64; 6],
    pub residual_failures: usize,
    pub rk4_failures: usize,
    pub grad_failures: usize,
    pub errors: usize,
}

impl SubspaceReport {
    pub fn passed(&self) -> bool {
        self.draws > 0
            && self.residual_failures == 0
            && self.rk4_failures == 0
            && self.grad_failures == 0
            && self.errors == 0
    }

    pub fn worst_grad_overall(&self) -> f64 {
        self.worst_grad.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub config: VerifyConfig,
    pub subspaces: Vec<SubspaceReport>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.subspaces.iter().all(SubspaceReport::passed)
    }

    pub fn subspace(&self, id: SubspaceId) -> Option<&SubspaceReport> {
        self.subspaces.iter().find(|s| s.id == id)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "verify-kernel seed={} draws_per_subspace={} residual_tol={:e} rk4_rel_tol={:e} grad_rel_tol={:e}",
            self.config.seed,
            self.config.draws_per_subspace,
            self.config.residual_tol,
            self.config.rk4_rel_tol,
            self.config.grad_rel_tol,
        )?;
        for s in &self.subspaces {
            write!(
                f,
                "subspace={} status={} draws={} redrawn={} max_residual={:.3e} max_rk4_err={:.3e} max_grad_err={:.3e}",
                s.id,
                if s.passed() { "PASS" } else { "FAIL" },
                s.draws,
                s.redrawn,
                s.worst_residual,
                s.worst_rk4,
                s.worst_grad_overall(),
            )?;
            for (name, e) in PARTIALS.iter().zip(s.worst_grad) {
                write!(f, " grad_{name}={e:.3e}")?;
            }
            writeln!(
                f,
                " residual_failures={} rk4_failures={} grad_failures={} errors={}",
                s.residual_failures, s.rk4_failures, s.grad_failures, s.errors
            )?;
        }
        write!(f, "overall={}", if self.passed() { "PASS" } else { "FAIL" })
    }
}

/// Check the production kernel.
pub fn verify_kernel(cfg: &VerifyConfig) -> Result<VerifyReport> {
    verify_kernel_with(cfg, &kernel::eval_traced)
}

/// Check an arbitrary evaluator against the same oracles.
pub fn verify_kernel_with(cfg: &VerifyConfig, evaluator: &Evaluator) -> Result<VerifyReport> {
    cfg.kernel.validate()?;
    if cfg.draws_per_subspace == 0 {
        return Err(Error::InvalidInput("draws must be at least 1".into()));
    }
    let grid = grid(cfg);
    let subspaces = SubspaceId::ALL
        .iter()
        .enumerate()
        .map(|(k, &id)| verify_subspace(cfg, evaluator, &grid, k as u64, id))
        .collect();
    Ok(VerifyReport {
        config: *cfg,
        subspaces,
    })
}

fn grid(cfg: &VerifyConfig) -> Vec<f64> {
    let n = (cfg.t_max / cfg.grid_step).round() as i64;
    (-n..=n)
        .map(|i| i as f64 * cfg.grid_step)
        .filter(|t| t.abs() >= cfg.exclude_radius)
        .collect()
}

#[derive(Default)]
struct DrawOutcome {
    redrawn: usize,
    residual: f64,
    rk4: f64,
    grad: [f64; 6],
    residual_fail: bool,
    rk4_fail: bool,
    grad_fail: bool,
    error: bool,
}

fn verify_subspace(
    cfg: &VerifyConfig,
    evaluator: &Evaluator,
    grid: &[f64],
    stream: u64,
    id: SubspaceId,
) -> SubspaceReport {
    let outcomes: Vec<DrawOutcome> = (0..cfg.draws_per_subspace)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(stream * 1_000_003 + i as u64);
            check_one(cfg, evaluator, grid, id, &mut rng)
        })
        .collect();

    let mut report = SubspaceReport {
        id,
        draws: 0,
        redrawn: 0,
        worst_residual: 0.0,
        worst_rk4: 0.0,
        worst_grad: [0.0; 6],
        residual_failures: 0,
        rk4_failures: 0,
        grad_failures: 0,
        errors: 0,
    };
    for o in outcomes {
        report.redrawn += o.redrawn;
        if o.error {
            report.errors += 1;
            continue;
        }
        report.draws += 1;
        report.worst_residual = report.worst_residual.max(o.residual);
        report.worst_rk4 = report.worst_rk4.max(o.rk4);
        for (w, g) in report.worst_grad.iter_mut().zip(o.grad) {
            *w = w.max(g);
        }
        report.residual_failures += o.residual_fail as usize;
        report.rk4_failures += o.rk4_fail as usize;
        report.grad_failures += o.grad_fail as usize;
    }
    report
}

fn draw_magnitude(rng: &mut ChaCha8Rng, cfg: &VerifyConfig) -> f64 {
    let m = rng.gen_range(cfg.margin..=cfg.coeff_range);
    if rng.gen_bool(0.5) {
        m
    } else {
        -m
    }
}

/// Draw raw coefficients lying in `id`, away from its boundaries.
fn draw_coefficients(rng: &mut ChaCha8Rng, cfg: &VerifyConfig, id: SubspaceId) -> DeuParams {
    let r = cfg.coeff_range;
    let c1 = rng.gen_range(-r..=r);
    let c2 = rng.gen_range(-r..=r);
    loop {
        let (a, b, c) = match id.structural {
            Structural::Full => {
                let (a, c) = (draw_magnitude(rng, cfg), draw_magnitude(rng, cfg));
                let b = match id.regime {
                    Regime::Critical => {
                        if a * c <= 0.0 {
                            continue;
                        }
                        let b = (4.0 * a * c).sqrt();
                        if b > r {
                            continue;
                        }
                        if rng.gen_bool(0.5) {
                            b
                        } else {
                            -b
                        }
                    }
                    _ => draw_magnitude(rng, cfg),
                };
                let disc = b * b - 4.0 * a * c;
                let ok = match id.regime {
                    Regime::Overdamped => disc > cfg.margin,
                    Regime::Underdamped => disc < -cfg.margin,
                    _ => true,
                };
                if !ok {
                    continue;
                }
                (a, b, c)
            }
            Structural::NoDamping => {
                let (a, c) = (draw_magnitude(rng, cfg), draw_magnitude(rng, cfg));
                let oscillatory = a * c > 0.0;
                if oscillatory != (id.regime == Regime::Oscillatory) {
                    continue;
                }
                (a, 0.0, c)
            }
            Structural::NoStiffness => (draw_magnitude(rng, cfg), draw_magnitude(rng, cfg), 0.0),
            Structural::NoMass => (0.0, draw_magnitude(rng, cfg), draw_magnitude(rng, cfg)),
            Structural::MassOnly => (draw_magnitude(rng, cfg), 0.0, 0.0),
            Structural::DampingOnly => (0.0, draw_magnitude(rng, cfg), 0.0),
            Structural::StiffnessOnly => (0.0, 0.0, draw_magnitude(rng, cfg)),
        };
        return DeuParams::new(a, b, c, c1, c2);
    }
}

fn five_point(
    g: impl Fn(f64) -> Result<(EvalResult, bool)>,
    x: f64,
    h: f64,
) -> Result<(f64, bool)> {
    let mut clamped = false;
    let mut y = |v: f64| -> Result<f64> {
        let (r, c) = g(v)?;
        clamped |= c;
        Ok(r.y)
    };
    let d = (-y(x + 2.0 * h)? + 8.0 * y(x + h)? - 8.0 * y(x - h)? + y(x - 2.0 * h)?) / (12.0 * h);
    Ok((d, clamped))
}

enum Checked {
    Done(DrawOutcome),
    Clamped,
}

fn check_one(
    cfg: &VerifyConfig,
    evaluator: &Evaluator,
    grid: &[f64],
    id: SubspaceId,
    rng: &mut ChaCha8Rng,
) -> DrawOutcome {
    let mut redrawn = 0;
    for _ in 0..cfg.max_attempts {
        let raw = draw_coefficients(rng, cfg, id);
        let (p, got) = match kernel::resolve_subspace(&raw, &cfg.kernel) {
            Ok(v) => v,
            Err(_) => {
                return DrawOutcome {
                    error: true,
                    redrawn,
                    ..Default::default()
                }
            }
        };
        if got != id {
            redrawn += 1;
            continue;
        }
        match check_params(cfg, evaluator, grid, &p, id) {
            Ok(Checked::Done(mut o)) => {
                o.redrawn = redrawn;
                return o;
            }
            Ok(Checked::Clamped) => redrawn += 1,
            Err(_) => {
                return DrawOutcome {
                    error: true,
                    redrawn,
                    ..Default::default()
                }
            }
        }
    }
    DrawOutcome {
        error: true,
        redrawn,
        ..Default::default()
    }
}

fn check_params(
    cfg: &VerifyConfig,
    evaluator: &Evaluator,
    grid: &[f64],
    p: &DeuParams,
    id: SubspaceId,
) -> Result<Checked> {
    let k = &cfg.kernel;
    let at = |q: &DeuParams, t: f64| evaluator(q, id, t, k);

    // Values on the grid, plus the oracle's neighbourhood points.
    let mut values = Vec::with_capacity(grid.len());
    for &t in grid {
        let (r, clamped) = at(p, t)?;
        if clamped {
            return Ok(Checked::Clamped);
        }
        values.push(r);
    }

    let mut out = DrawOutcome::default();

    // ODE residual.
    let clamp_seen = std::cell::Cell::new(false);
    let profile = oracle::residual_profile(p.a, p.b, p.c, grid, |t| {
        let (r, c) = at(p, t)?;
        if c {
            clamp_seen.set(true);
        }
        Ok(r)
    })?;
    if clamp_seen.get() {
        return Ok(Checked::Clamped);
    }
    for point in &profile {
        let scaled = point.residual / point.y.abs().max(1.0);
        out.residual = out.residual.max(scaled);
        if scaled >= cfg.residual_tol {
            out.residual_fail = true;
        }
    }

    // RK4 propagated from the left end of the grid.
    let (start, _) = at(p, -cfg.t_max)?;
    let ivp = IvpSpec {
        a: p.a,
        b: p.b,
        c: p.c,
        t0: -cfg.t_max,
        y0: start.y,
        yprime0: start.dy_dt,
        t_end: cfg.t_max,
        step: cfg.rk4_step,
    };
    let path = oracle::integrate(&ivp)?;
    for (t, r) in grid.iter().zip(&values) {
        let idx = ((t + cfg.t_max) / cfg.rk4_step).round() as usize;
        let (_, y_rk) = path[idx];
        let diff = (y_rk - r.y).abs();
        out.rk4 = out.rk4.max(diff / r.y.abs().max(1.0));
        if diff > cfg.rk4_rel_tol.max(cfg.rk4_rel_tol * r.y.abs()) {
            out.rk4_fail = true;
        }
    }

    // Partials against five-point differences.
    let h = cfg.fd_step;
    let zero = [false, p.a == 0.0, p.b == 0.0, p.c == 0.0, false, false];
    for (&t, r) in grid.iter().zip(&values) {
        let analytic = [r.dy_dt, r.dy_da, r.dy_db, r.dy_dc, r.dy_dc1, r.dy_dc2];
        for (j, &an) in analytic.iter().enumerate() {
            if zero[j] {
                if an != 0.0 {
                    out.grad[j] = f64::INFINITY;
                    out.grad_fail = true;
                }
                continue;
            }
            let (num, clamped) = match j {
                0 => five_point(|x| at(p, x), t, h)?,
                _ => {
                    let base = p.as_array()[j - 1];
                    // Curvature in a coefficient grows like 1/|coefficient|.
                    let h = if j <= 3 { h * base.abs().min(1.0) } else { h };
                    five_point(
                        |x| {
                            let mut v = p.as_array();
                            v[j - 1] = x;
                            let mut q = *p;
                            q.set_from_array(v);
                            at(&q, t)
                        },
                        base,
                        h,
                    )?
                }
            };
            if clamped {
                return Ok(Checked::Clamped);
            }
            let err = (an - num).abs() / an.abs().max(num.abs()).max(1.0);
            out.grad[j] = out.grad[j].max(err);
            if err >= cfg.grad_rel_tol {
                out.grad_fail = true;
            }
        }
    }
    Ok(Checked::Done(out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> VerifyConfig {
        VerifyConfig {
            draws_per_subspace: 20,
            seed: 7,
            ..VerifyConfig::default()
        }
    }

    #[test]
    fn production_kernel_passes_small_run() {
        let report = verify_kernel(&small()).unwrap();
        assert!(report.passed(), "{report}");
        assert_eq!(report.subspaces.len(), SubspaceId::ALL.len());
    }

    #[test]
    fn same_seed_same_report() {
        let a = verify_kernel(&small()).unwrap().to_string();
        let b = verify_kernel(&small()).unwrap().to_string();
        assert_eq!(a, b);
    }

    #[test]
    fn negated_mass_partial_is_caught() {
        let broken = |p: &DeuParams, id: SubspaceId, t: f64, k: &KernelConfig| {
            let (mut r, c) = kernel::eval_traced(p, id, t, k)?;
            r.dy_da = -r.dy_da;
            Ok((r, c))
        };
        let report = verify_kernel_with(&small(), &broken).unwrap();
        assert!(!report.passed());
        let full = report
            .subspace(SubspaceId::new(Structural::Full, Regime::Overdamped))
            .unwrap();
        assert!(full.grad_failures > 0);
        assert!(full.worst_grad[1] > VerifyConfig::default().grad_rel_tol);
        // Subspaces without `a` are unaffected.
        let no_mass = report
            .subspace(SubspaceId::new(Structural::NoMass, Regime::NotApplicable))
            .unwrap();
        assert!(no_mass.passed());
    }

    #[test]
    fn zero_draws_rejected() {
        let cfg = VerifyConfig {
            draws_per_subspace: 0,
            ..VerifyConfig::default()
        };
        assert!(verify_kernel(&cfg).is_err());
    }
}
