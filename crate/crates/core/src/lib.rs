//! Differential equation units (DEUs): per-neuron activations given by the
//! closed-form solution of `a·y'' + b·y' + c·y = u(t)` with five learnable
//! coefficients, plus a compact dense training engine built around them.

pub mod data;
pub mod dual;
pub mod error;
pub mod kernel;
pub mod nn;
pub mod optim;
pub mod oracle;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use kernel::{
    eval, eval_batch, homogeneous_basis, resolve_subspace, DeuParams, EvalGrid, EvalResult,
    KernelConfig, Regime, Structural, SubspaceId,
};
pub use tensor::Tensor2D;
