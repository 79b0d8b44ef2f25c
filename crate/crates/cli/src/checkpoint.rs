//! JSON checkpoints. Floats are written in shortest round-trip form and parsed
//! back exactly, so a save/load cycle reproduces every bit.

use std::fs;
use std::path::Path;

use deu::nn::{Activation, ActivationKind, BatchNorm, DenseLayer, DeuUnit, Network};
use deu::{DeuParams, KernelConfig, Tensor2D};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub arch: Vec<usize>,
    pub activation: Option<ActivationKind>,
    pub kernel: KernelConfig,
    pub seed: u64,
    pub epochs: usize,
    pub layers: Vec<LayerState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixState {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerState {
    pub weights: MatrixState,
    pub bias: Vec<f64>,
    pub batch_norm: Option<BatchNorm>,
    pub activation: Option<ActivationState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ActivationState {
    Deu { units: Vec<UnitState> },
    Relu,
    Prelu { alpha: Vec<f64> },
    Swish { beta: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitState {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub c1: f64,
    pub c2: f64,
    pub frozen_a: bool,
    pub frozen_b: bool,
    pub frozen_c: bool,
    pub subspace: String,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::new("invalid_checkpoint", msg)
}

impl Checkpoint {
    pub fn from_network(net: &Network, seed: u64, epochs: usize) -> Self {
        let layers = net
            .layers()
            .iter()
            .map(|l| LayerState {
                weights: MatrixState {
                    rows: l.weights.rows(),
                    cols: l.weights.cols(),
                    data: l.weights.data().to_vec(),
                },
                bias: l.bias.clone(),
                batch_norm: l.batch_norm.clone(),
                activation: l.activation.as_ref().map(|a| match a {
                    Activation::Deu(units) => ActivationState::Deu {
                        units: units
                            .iter()
                            .map(|u| {
                                let p = u.params;
                                UnitState {
                                    a: p.a,
                                    b: p.b,
                                    c: p.c,
                                    c1: p.c1,
                                    c2: p.c2,
                                    frozen_a: p.frozen_a,
                                    frozen_b: p.frozen_b,
                                    frozen_c: p.frozen_c,
                                    subspace: u.subspace.to_string(),
                                }
                            })
                            .collect(),
                    },
                    Activation::Relu => ActivationState::Relu,
                    Activation::Prelu(alpha) => ActivationState::Prelu {
                        alpha: alpha.clone(),
                    },
                    Activation::Swish(beta) => ActivationState::Swish { beta: beta.clone() },
                }),
            })
            .collect();
        Checkpoint {
            format_version: FORMAT_VERSION,
            arch: net.widths(),
            activation: net.activation_kind(),
            kernel: *net.kernel(),
            seed,
            epochs,
            layers,
        }
    }

    /// Rebuild the network. Stored subspaces must match what the stored
    /// coefficients resolve to.
    pub fn to_network(&self) -> CliResult<Network> {
        if self.format_version != FORMAT_VERSION {
            return Err(CliError::new(
                "version_mismatch",
                format!(
                    "checkpoint format {} is not supported (expected {FORMAT_VERSION})",
                    self.format_version
                ),
            ));
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        for (li, l) in self.layers.iter().enumerate() {
            let weights =
                Tensor2D::from_vec(l.weights.rows, l.weights.cols, l.weights.data.clone())
                    .map_err(|e| invalid(format!("layer {li} weights: {e}")))?;
            let activation = match &l.activation {
                None => None,
                Some(ActivationState::Relu) => Some(Activation::Relu),
                Some(ActivationState::Prelu { alpha }) => Some(Activation::Prelu(alpha.clone())),
                Some(ActivationState::Swish { beta }) => Some(Activation::Swish(beta.clone())),
                Some(ActivationState::Deu { units }) => {
                    let mut out = Vec::with_capacity(units.len());
                    for (j, u) in units.iter().enumerate() {
                        let params = DeuParams {
                            frozen_a: u.frozen_a,
                            frozen_b: u.frozen_b,
                            frozen_c: u.frozen_c,
                            ..DeuParams::new(u.a, u.b, u.c, u.c1, u.c2)
                        };
                        let unit = DeuUnit::new(params, &self.kernel)?;
                        if unit.params != params || unit.subspace.to_string() != u.subspace {
                            return Err(invalid(format!(
                                "layer {li} neuron {j}: stored subspace {:?} does not match coefficients ({})",
                                u.subspace, unit.subspace
                            )));
                        }
                        out.push(unit);
                    }
                    Some(Activation::Deu(out))
                }
            };
            layers.push(DenseLayer {
                weights,
                bias: l.bias.clone(),
                batch_norm: l.batch_norm.clone(),
                activation,
            });
        }
        let net = Network::new(layers, self.kernel)?;
        if net.widths() != self.arch {
            return Err(invalid(format!(
                "arch {:?} does not match layer shapes {:?}",
                self.arch,
                net.widths()
            )));
        }
        if net.activation_kind() != self.activation {
            return Err(invalid("activation kind does not match layers"));
        }
        Ok(net)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> CliResult<Self> {
        #[derive(Deserialize)]
        struct Version {
            format_version: Option<u32>,
        }
        let v: Version = serde_json::from_str(text)
            .map_err(|e| CliError::new("parse_error", format!("checkpoint: {e}")))?;
        match v.format_version {
            Some(FORMAT_VERSION) => {}
            Some(other) => {
                return Err(CliError::new(
                    "version_mismatch",
                    format!(
                        "checkpoint format {other} is not supported (expected {FORMAT_VERSION})"
                    ),
                ))
            }
            None => {
                return Err(CliError::new(
                    "parse_error",
                    "checkpoint: missing format_version",
                ))
            }
        }
        serde_json::from_str(text)
            .map_err(|e| CliError::new("parse_error", format!("checkpoint: {e}")))
    }

    /// Write via a temporary file and rename, so a crash never leaves a
    /// partial checkpoint behind.
    pub fn save(&self, path: &Path) -> CliResult<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_json()).map_err(|e| CliError::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use deu::nn::init_network;

    fn nets() -> Vec<Network> {
        let k = KernelConfig::default();
        ActivationKind::ALL
            .iter()
            .map(|&kind| init_network(&[3, 5, 4, 2], kind, 11, &k, true).unwrap())
            .collect()
    }

    #[test]
    fn round_trip_is_exact() {
        for net in nets() {
            let ck = Checkpoint::from_network(&net, 11, 0);
            let back = Checkpoint::from_json(&ck.to_json()).unwrap();
            assert_eq!(back, ck);
            let net2 = back.to_network().unwrap();
            assert_eq!(net2.layers(), net.layers());
        }
    }

    #[test]
    fn awkward_floats_survive() {
        let mut net = nets().remove(1);
        let vals = [
            0.1 + 0.2,
            -0.0,
            5e-324,
            f64::MAX,
            1.0 / 3.0,
            -2.2250738585072014e-308,
        ];
        net.layers_mut()[0].bias[..].copy_from_slice(&vals[..5]);
        net.layers_mut()[1].bias[0] = vals[5];
        let back = Checkpoint::from_json(&Checkpoint::from_network(&net, 0, 0).to_json())
            .unwrap()
            .to_network()
            .unwrap();
        for (a, b) in back.layers()[0].bias.iter().zip(&net.layers()[0].bias) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(back.layers()[1].bias[0].to_bits(), vals[5].to_bits());
    }

    #[test]
    fn corruption_is_detected() {
        let ck = Checkpoint::from_network(&nets()[0], 0, 0);
        let json = ck.to_json();
        assert_eq!(
            Checkpoint::from_json(&json[..json.len() / 2])
                .unwrap_err()
                .code,
            "parse_error"
        );
        let v2 = json.replacen("\"format_version\":1", "\"format_version\":2", 1);
        assert_eq!(
            Checkpoint::from_json(&v2).unwrap_err().code,
            "version_mismatch"
        );

        let mut bad = ck.clone();
        if let Some(ActivationState::Deu { units }) = &mut bad.layers[0].activation {
            units[0].subspace = "MassOnly".into();
        }
        assert_eq!(bad.to_network().unwrap_err().code, "invalid_checkpoint");

        let mut bad = ck;
        bad.layers[0].weights.data.pop();
        assert!(bad.to_network().is_err());
    }
}
