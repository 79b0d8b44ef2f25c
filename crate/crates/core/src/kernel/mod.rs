//! Differential equation unit kernel.
//!
//! A unit's activation is the solution of `a·y'' + b·y' + c·y = u(t)` where `u`
//! is the Heaviside step (`u(0) = 0`). The solution is written as
//! `y = f(t) + c1·f1(t) + c2·f2(t)` with `f` the zero-initial-condition step
//! response and `(f1, f2)` a fixed homogeneous basis per parameter subspace.
//!
//! Coefficients whose magnitude falls below `epsilon` are snapped to zero and
//! frozen, which moves the unit into one of seven structural subspaces. Each
//! subspace has its own closed form (see [`closed_form`]).

mod closed_form;

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor2D;

pub use closed_form::Basis;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    /// Projection threshold.
    pub epsilon: f64,
    /// Largest magnitude allowed for any exponent argument.
    pub exp_arg_clamp: f64,
    /// Largest magnitude allowed for the activation and each partial.
    pub output_clamp: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            epsilon: 1e-3,
            exp_arg_clamp: 30.0,
            output_clamp: 1e4,
        }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must lie in (0, 1), got {}",
                self.epsilon
            )));
        }
        for (name, v) in [
            ("exp_arg_clamp", self.exp_arg_clamp),
            ("output_clamp", self.output_clamp),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be finite and positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// The five learnable coefficients of one unit plus freeze flags.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeuParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub c1: f64,
    pub c2: f64,
    #[serde(default)]
    pub frozen_a: bool,
    #[serde(default)]
    pub frozen_b: bool,
    #[serde(default)]
    pub frozen_c: bool,
}

impl DeuParams {
    pub fn new(a: f64, b: f64, c: f64, c1: f64, c2: f64) -> Self {
        DeuParams {
            a,
            b,
            c,
            c1,
            c2,
            frozen_a: false,
            frozen_b: false,
            frozen_c: false,
        }
    }

    /// `b·y' = u`, i.e. `y = max(0, t)`.
    pub fn relu() -> Self {
        DeuParams {
            frozen_a: true,
            frozen_c: true,
            ..DeuParams::new(0.0, 1.0, 0.0, 0.0, 0.0)
        }
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.a, self.b, self.c, self.c1, self.c2]
    }

    /// Freeze mask in `[a, b, c, c1, c2]` order.
    pub fn frozen_mask(&self) -> [bool; 5] {
        [self.frozen_a, self.frozen_b, self.frozen_c, false, false]
    }

    pub fn set_from_array(&mut self, v: [f64; 5]) {
        self.a = v[0];
        self.b = v[1];
        self.c = v[2];
        self.c1 = v[3];
        self.c2 = v[4];
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Structural {
    Full,
    NoDamping,
    NoStiffness,
    NoMass,
    MassOnly,
    DampingOnly,
    StiffnessOnly,
}

impl Structural {
    pub const ALL: [Structural; 7] = [
        Structural::Full,
        Structural::NoDamping,
        Structural::NoStiffness,
        Structural::NoMass,
        Structural::MassOnly,
        Structural::DampingOnly,
        Structural::StiffnessOnly,
    ];

    /// Structural subspace implied by which of `(a, b, c)` are exactly zero.
    pub fn from_zero_pattern(a_zero: bool, b_zero: bool, c_zero: bool) -> Option<Self> {
        match (a_zero, b_zero, c_zero) {
            (false, false, false) => Some(Structural::Full),
            (false, true, false) => Some(Structural::NoDamping),
            (false, false, true) => Some(Structural::NoStiffness),
            (true, false, false) => Some(Structural::NoMass),
            (false, true, true) => Some(Structural::MassOnly),
            (true, false, true) => Some(Structural::DampingOnly),
            (true, true, false) => Some(Structural::StiffnessOnly),
            (true, true, true) => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Structural::Full => "Full",
            Structural::NoDamping => "NoDamping",
            Structural::NoStiffness => "NoStiffness",
            Structural::NoMass => "NoMass",
            Structural::MassOnly => "MassOnly",
            Structural::DampingOnly => "DampingOnly",
            Structural::StiffnessOnly => "StiffnessOnly",
        }
    }

    /// Whether the homogeneous space is two-dimensional (`a != 0`).
    pub fn is_second_order(self) -> bool {
        matches!(
            self,
            Structural::Full
                | Structural::NoDamping
                | Structural::NoStiffness
                | Structural::MassOnly
        )
    }
}

impl fmt::Display for Structural {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Regime {
    Overdamped,
    Underdamped,
    Critical,
    Oscillatory,
    Hyperbolic,
    NotApplicable,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::Overdamped => "Overdamped",
            Regime::Underdamped => "Underdamped",
            Regime::Critical => "Critical",
            Regime::Oscillatory => "Oscillatory",
            Regime::Hyperbolic => "Hyperbolic",
            Regime::NotApplicable => "NotApplicable",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SubspaceId {
    pub structural: Structural,
    pub regime: Regime,
}

impl SubspaceId {
    /// Every (structural, regime) combination that resolution can produce.
    pub const ALL: [SubspaceId; 10] = [
        SubspaceId::new(Structural::Full, Regime::Overdamped),
        SubspaceId::new(Structural::Full, Regime::Underdamped),
        SubspaceId::new(Structural::Full, Regime::Critical),
        SubspaceId::new(Structural::NoDamping, Regime::Oscillatory),
        SubspaceId::new(Structural::NoDamping, Regime::Hyperbolic),
        SubspaceId::new(Structural::NoStiffness, Regime::NotApplicable),
        SubspaceId::new(Structural::NoMass, Regime::NotApplicable),
        SubspaceId::new(Structural::MassOnly, Regime::NotApplicable),
        SubspaceId::new(Structural::DampingOnly, Regime::NotApplicable),
        SubspaceId::new(Structural::StiffnessOnly, Regime::NotApplicable),
    ];

    pub const fn new(structural: Structural, regime: Regime) -> Self {
        SubspaceId { structural, regime }
    }
}

impl fmt::Display for SubspaceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.regime {
            Regime::NotApplicable => write!(f, "{}", self.structural),
            r => write!(f, "{}/{}", self.structural, r.name()),
        }
    }
}

/// Activation value and the partials needed for backpropagation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EvalResult {
    pub y: f64,
    pub dy_dt: f64,
    pub dy_da: f64,
    pub dy_db: f64,
    pub dy_dc: f64,
    pub dy_dc1: f64,
    pub dy_dc2: f64,
}

impl EvalResult {
    /// Partials with respect to `[a, b, c, c1, c2]`.
    pub fn param_grads(&self) -> [f64; 5] {
        [self.dy_da, self.dy_db, self.dy_dc, self.dy_dc1, self.dy_dc2]
    }
}

/// Snap near-zero coefficients to zero (freezing them), keep `(a, b, c)` away
/// from the all-zero point and stabilize a near-vanishing discriminant.
pub fn resolve_subspace(p: &DeuParams, cfg: &KernelConfig) -> Result<(DeuParams, SubspaceId)> {
    for (name, v) in [
        ("a", p.a),
        ("b", p.b),
        ("c", p.c),
        ("c1", p.c1),
        ("c2", p.c2),
    ] {
        if !v.is_finite() {
            return Err(Error::InvalidParameter { name, value: v });
        }
    }
    let eps = cfg.epsilon;
    let mut q = *p;

    let project = |v: &mut f64, frozen: &mut bool| {
        if *frozen || v.abs() < eps {
            *v = 0.0;
            *frozen = true;
        }
    };
    project(&mut q.a, &mut q.frozen_a);
    project(&mut q.b, &mut q.frozen_b);
    project(&mut q.c, &mut q.frozen_c);

    if q.a == 0.0 && q.b == 0.0 && q.c == 0.0 {
        q.c = eps;
        q.frozen_c = false;
    }

    let structural = Structural::from_zero_pattern(q.a == 0.0, q.b == 0.0, q.c == 0.0)
        .expect("all-zero coefficients were excluded above");

    let regime = match structural {
        Structural::Full => {
            let ac = q.a * q.c;
            let disc = q.b * q.b - 4.0 * ac;
            if ac > 0.0 && disc.abs() < eps {
                q.b = q.b.signum() * (4.0 * ac).sqrt();
                Regime::Critical
            } else if disc >= eps || ac <= 0.0 {
                // a·c <= 0 forces disc >= b² > 0: two distinct real roots.
                Regime::Overdamped
            } else {
                Regime::Underdamped
            }
        }
        Structural::NoDamping => {
            if q.a * q.c > 0.0 {
                Regime::Oscillatory
            } else {
                Regime::Hyperbolic
            }
        }
        _ => Regime::NotApplicable,
    };

    Ok((q, SubspaceId::new(structural, regime)))
}

fn check_resolved(p: &DeuParams, id: SubspaceId, cfg: &KernelConfig) -> Result<()> {
    let eps = cfg.epsilon;
    for (name, v) in [("a", p.a), ("b", p.b), ("c", p.c)] {
        if v != 0.0 && v.abs() < eps {
            return Err(Error::ContractViolation(format!(
                "coefficient {name} = {v} lies inside (0, epsilon); resolve before evaluating"
            )));
        }
    }
    for (name, v) in [
        ("a", p.a),
        ("b", p.b),
        ("c", p.c),
        ("c1", p.c1),
        ("c2", p.c2),
    ] {
        if !v.is_finite() {
            return Err(Error::InvalidParameter { name, value: v });
        }
    }
    let pattern = Structural::from_zero_pattern(p.a == 0.0, p.b == 0.0, p.c == 0.0);
    if pattern != Some(id.structural) {
        return Err(Error::ContractViolation(format!(
            "subspace {id} does not match coefficients (a={}, b={}, c={})",
            p.a, p.b, p.c
        )));
    }
    let regime_ok = match id.structural {
        Structural::Full => matches!(
            id.regime,
            Regime::Overdamped | Regime::Underdamped | Regime::Critical
        ),
        Structural::NoDamping => {
            let oscillatory = p.a * p.c > 0.0;
            (oscillatory && id.regime == Regime::Oscillatory)
                || (!oscillatory && id.regime == Regime::Hyperbolic)
        }
        _ => id.regime == Regime::NotApplicable,
    };
    if !regime_ok {
        return Err(Error::ContractViolation(format!(
            "regime of {id} does not match coefficients (a={}, b={}, c={})",
            p.a, p.b, p.c
        )));
    }
    Ok(())
}

/// Evaluate the unit at `t`, also reporting whether any clamp was active.
pub fn eval_traced(
    p: &DeuParams,
    id: SubspaceId,
    t: f64,
    cfg: &KernelConfig,
) -> Result<(EvalResult, bool)> {
    check_resolved(p, id, cfg)?;
    if !t.is_finite() {
        return Err(Error::InvalidInput(format!(
            "non-finite pre-activation {t}"
        )));
    }
    Ok(closed_form::evaluate(p, id, t, cfg))
}

/// Evaluate the unit's activation and its analytic partials at `t`.
pub fn eval(p: &DeuParams, id: SubspaceId, t: f64, cfg: &KernelConfig) -> Result<EvalResult> {
    eval_traced(p, id, t, cfg).map(|(r, _)| r)
}

/// Values of the homogeneous basis `(f1, f2)` at `t`.
pub fn homogeneous_basis(
    p: &DeuParams,
    id: SubspaceId,
    t: f64,
    cfg: &KernelConfig,
) -> Result<(f64, f64)> {
    check_resolved(p, id, cfg)?;
    if !t.is_finite() {
        return Err(Error::InvalidInput(format!(
            "non-finite pre-activation {t}"
        )));
    }
    let (basis, _) = closed_form::basis(p, id, t, cfg);
    Ok((basis.f1, basis.f2))
}

/// Row-major grid of [`EvalResult`]s, one column per unit.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalGrid {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<EvalResult>,
    /// Elements where an exponent or output clamp was active.
    pub clamped: usize,
}

impl EvalGrid {
    pub fn get(&self, row: usize, col: usize) -> &EvalResult {
        &self.data[row * self.cols + col]
    }
}

/// Apply [`eval`] elementwise; column `j` of `ts` is fed to unit `j`.
///
/// Rows are evaluated in parallel. Each element is a pure function of its
/// inputs, so the result does not depend on scheduling.
pub fn eval_batch(
    params: &[(DeuParams, SubspaceId)],
    ts: &Tensor2D,
    cfg: &KernelConfig,
) -> Result<EvalGrid> {
    if params.len() != ts.cols() {
        return Err(Error::shape(
            format!("{} columns", params.len()),
            format!("{} columns", ts.cols()),
        ));
    }
    for (p, id) in params {
        check_resolved(p, *id, cfg)?;
    }
    if let Some(bad) = ts.data().iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "non-finite pre-activation {bad}"
        )));
    }
    let cols = ts.cols();
    let mut data = vec![EvalResult::default(); ts.rows() * cols];
    let mut clamped = 0;
    if cols > 0 {
        clamped = data
            .par_chunks_mut(cols)
            .zip(ts.data().par_chunks(cols))
            .map(|(out, row)| {
                let mut n = 0;
                for ((slot, &t), (p, id)) in out.iter_mut().zip(row).zip(params) {
                    let (r, hit) = closed_form::evaluate(p, *id, t, cfg);
                    *slot = r;
                    n += hit as usize;
                }
                n
            })
            .sum();
    }
    Ok(EvalGrid {
        rows: ts.rows(),
        cols,
        data,
        clamped,
    })
}
