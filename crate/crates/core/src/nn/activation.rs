use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{self, DeuParams, EvalGrid, KernelConfig, SubspaceId};
use crate::tensor::Tensor2D;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Deu,
    Relu,
    Prelu,
    Swish,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 4] = [
        ActivationKind::Deu,
        ActivationKind::Relu,
        ActivationKind::Prelu,
        ActivationKind::Swish,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Deu => "deu",
            ActivationKind::Relu => "relu",
            ActivationKind::Prelu => "prelu",
            ActivationKind::Swish => "swish",
        }
    }

    /// Learnable scalars each hidden unit adds on top of its weights.
    pub fn params_per_unit(self) -> usize {
        match self {
            ActivationKind::Deu => 5,
            ActivationKind::Relu => 0,
            ActivationKind::Prelu | ActivationKind::Swish => 1,
        }
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "deu" => Ok(ActivationKind::Deu),
            "relu" => Ok(ActivationKind::Relu),
            "prelu" => Ok(ActivationKind::Prelu),
            "swish" => Ok(ActivationKind::Swish),
            other => Err(Error::UnknownKind {
                what: "activation",
                value: other.to_string(),
            }),
        }
    }
}

/// One DEU neuron: coefficients plus the subspace they were resolved into.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeuUnit {
    pub params: DeuParams,
    pub subspace: SubspaceId,
}

impl DeuUnit {
    pub fn new(params: DeuParams, cfg: &KernelConfig) -> Result<Self> {
        let (params, subspace) = kernel::resolve_subspace(&params, cfg)?;
        Ok(DeuUnit { params, subspace })
    }

    pub fn resolve(&mut self, cfg: &KernelConfig) -> Result<()> {
        *self = DeuUnit::new(self.params, cfg)?;
        Ok(())
    }
}

/// Per-layer activation with its per-neuron parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Activation {
    Deu(Vec<DeuUnit>),
    Relu,
    /// Leak slope per neuron.
    Prelu(Vec<f64>),
    /// `x·sigmoid(beta·x)`, beta per neuron.
    Swish(Vec<f64>),
}

/// What the backward pass needs from the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub enum ActivationCache {
    Deu(EvalGrid),
    /// The activation input alone is enough.
    Input,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn kind(&self) -> ActivationKind {
        match self {
            Activation::Deu(_) => ActivationKind::Deu,
            Activation::Relu => ActivationKind::Relu,
            Activation::Prelu(_) => ActivationKind::Prelu,
            Activation::Swish(_) => ActivationKind::Swish,
        }
    }

    /// Number of neurons this activation carries parameters for, if any.
    pub fn width(&self) -> Option<usize> {
        match self {
            Activation::Deu(u) => Some(u.len()),
            Activation::Relu => None,
            Activation::Prelu(v) | Activation::Swish(v) => Some(v.len()),
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            Activation::Deu(u) => 5 * u.len(),
            Activation::Relu => 0,
            Activation::Prelu(v) | Activation::Swish(v) => v.len(),
        }
    }

    /// Parameters flattened; DEU neurons contribute `[a, b, c, c1, c2]` each.
    pub fn params_flat(&self) -> Vec<f64> {
        match self {
            Activation::Deu(units) => units.iter().flat_map(|u| u.params.as_array()).collect(),
            Activation::Relu => Vec::new(),
            Activation::Prelu(v) | Activation::Swish(v) => v.clone(),
        }
    }

    /// `true` for entries that must not move.
    pub fn frozen_mask_flat(&self) -> Vec<bool> {
        match self {
            Activation::Deu(units) => units.iter().flat_map(|u| u.params.frozen_mask()).collect(),
            _ => vec![false; self.num_params()],
        }
    }

    /// Write back flattened parameters. DEU neurons are re-resolved.
    pub fn set_params_flat(&mut self, flat: &[f64], cfg: &KernelConfig) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::shape(
                format!("{} activation parameters", self.num_params()),
                format!("{}", flat.len()),
            ));
        }
        match self {
            Activation::Deu(units) => {
                for (u, chunk) in units.iter_mut().zip(flat.chunks_exact(5)) {
                    u.params
                        .set_from_array([chunk[0], chunk[1], chunk[2], chunk[3], chunk[4]]);
                    u.resolve(cfg)?;
                }
            }
            Activation::Relu => {}
            Activation::Prelu(v) | Activation::Swish(v) => v.copy_from_slice(flat),
        }
        Ok(())
    }

    pub fn forward(&self, t: &Tensor2D, cfg: &KernelConfig) -> Result<(Tensor2D, ActivationCache)> {
        if let Some(w) = self.width() {
            if w != t.cols() {
                return Err(Error::shape(
                    format!("{w} units"),
                    format!("{} columns", t.cols()),
                ));
            }
        }
        let cols = t.cols();
        match self {
            Activation::Deu(units) => {
                let params: Vec<(DeuParams, SubspaceId)> =
                    units.iter().map(|u| (u.params, u.subspace)).collect();
                let grid = kernel::eval_batch(&params, t, cfg)?;
                let data = grid.data.iter().map(|r| r.y).collect();
                Ok((
                    Tensor2D::from_vec(t.rows(), cols, data)?,
                    ActivationCache::Deu(grid),
                ))
            }
            Activation::Relu => {
                let data = t
                    .data()
                    .iter()
                    .map(|&x| if x > 0.0 { x } else { 0.0 })
                    .collect();
                Ok((
                    Tensor2D::from_vec(t.rows(), cols, data)?,
                    ActivationCache::Input,
                ))
            }
            Activation::Prelu(alpha) => {
                let mut out = t.clone();
                for row in out.data_mut().chunks_exact_mut(cols) {
                    for (x, &a) in row.iter_mut().zip(alpha) {
                        if *x <= 0.0 {
                            *x *= a;
                        }
                    }
                }
                Ok((out, ActivationCache::Input))
            }
            Activation::Swish(beta) => {
                let mut out = t.clone();
                for row in out.data_mut().chunks_exact_mut(cols) {
                    for (x, &b) in row.iter_mut().zip(beta) {
                        *x *= sigmoid(b * *x);
                    }
                }
                Ok((out, ActivationCache::Input))
            }
        }
    }

    /// Returns the gradient with respect to the activation input and the
    /// flattened parameter gradient (frozen entries are exactly zero).
    pub fn backward(
        &self,
        t: &Tensor2D,
        cache: &ActivationCache,
        upstream: &Tensor2D,
    ) -> Result<(Tensor2D, Vec<f64>)> {
        let cols = t.cols();
        let mut dt = upstream.clone();
        let mut grads = vec![0.0; self.num_params()];
        match (self, cache) {
            (Activation::Deu(units), ActivationCache::Deu(grid)) => {
                if grid.rows != t.rows() || grid.cols != cols {
                    return Err(Error::StaleCache("activation grid shape".into()));
                }
                for (drow, evals) in dt
                    .data_mut()
                    .chunks_exact_mut(cols)
                    .zip(grid.data.chunks_exact(cols))
                {
                    for (j, (d, e)) in drow.iter_mut().zip(evals).enumerate() {
                        let g = *d;
                        let slot = &mut grads[5 * j..5 * j + 5];
                        for (s, pg) in slot.iter_mut().zip(e.param_grads()) {
                            *s += g * pg;
                        }
                        *d = g * e.dy_dt;
                    }
                }
                for (j, u) in units.iter().enumerate() {
                    for (k, frozen) in u.params.frozen_mask().into_iter().enumerate() {
                        if frozen {
                            grads[5 * j + k] = 0.0;
                        }
                    }
                }
            }
            (Activation::Relu, _) => {
                for (d, &x) in dt.data_mut().iter_mut().zip(t.data()) {
                    if x <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            (Activation::Prelu(alpha), _) => {
                for (drow, trow) in dt
                    .data_mut()
                    .chunks_exact_mut(cols)
                    .zip(t.data().chunks_exact(cols))
                {
                    for (j, (d, &x)) in drow.iter_mut().zip(trow).enumerate() {
                        if x <= 0.0 {
                            grads[j] += *d * x;
                            *d *= alpha[j];
                        }
                    }
                }
            }
            (Activation::Swish(beta), _) => {
                for (drow, trow) in dt
                    .data_mut()
                    .chunks_exact_mut(cols)
                    .zip(t.data().chunks_exact(cols))
                {
                    for (j, (d, &x)) in drow.iter_mut().zip(trow).enumerate() {
                        let s = sigmoid(beta[j] * x);
                        let ds = s * (1.0 - s);
                        grads[j] += *d * x * x * ds;
                        *d *= s + beta[j] * x * ds;
                    }
                }
            }
            (Activation::Deu(_), ActivationCache::Input) => {
                return Err(Error::StaleCache(
                    "DEU layer without evaluation grid".into(),
                ))
            }
        }
        Ok((dt, grads))
    }
}
