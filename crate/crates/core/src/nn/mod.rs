//! Fully connected classifiers with per-neuron activations.

mod activation;
mod batchnorm;
mod loss;


pub use activation::{Activation, ActivationCache, ActivationKind, DeuUnit};
pub use batchnorm::{BatchNorm, BatchNormCache};
pub use loss::{accuracy, argmax_rows, softmax_cross_entropy};

use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernel::{DeuParams, KernelConfig, SubspaceId};
use crate::tensor::{matmul_nn, matmul_nt, matmul_tn, Tensor2D};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// `act(bn(x·Wᵀ + bias))`; the output layer has neither.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `out × in`.
    pub weights: Tensor2D,
    pub bias: Vec<f64>,
    pub batch_norm: Option<BatchNorm>,
    pub activation: Option<Activation>,
}

impl DenseLayer {
    pub fn fan_in(&self) -> usize {
        self.weights.cols()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.rows()
    }

    pub fn num_params(&self) -> usize {
        self.weights.data().len()
            + self.bias.len()
            + self.batch_norm.as_ref().map_or(0, |bn| 2 * bn.features())
            + self.activation.as_ref().map_or(0, Activation::num_params)
    }

    fn validate(&self) -> Result<()> {
        let out = self.fan_out();
        if self.bias.len() != out {
            return Err(Error::shape(
                format!("{out} biases"),
                format!("{}", self.bias.len()),
            ));
        }
        if let Some(bn) = &self.batch_norm {
            let ok = bn.features() == out
                && bn.beta.len() == out
                && bn.running_mean.len() == out
                && bn.running_var.len() == out;
            if !ok {
                return Err(Error::shape(
                    format!("{out} normalized features"),
                    format!("{}", bn.features()),
                ));
            }
        }
        if let Some(w) = self.activation.as_ref().and_then(Activation::width) {
            if w != out {
                return Err(Error::shape(
                    format!("{out} activation units"),
                    format!("{w}"),
                ));
            }
        }
        Ok(())
    }

    fn affine(&self, x: &Tensor2D) -> Result<Tensor2D> {
        if x.cols() != self.fan_in() {
            return Err(Error::shape(
                format!("{} input features", self.fan_in()),
                format!("{}", x.cols()),
            ));
        }
        let mut z = matmul_nt(x, &self.weights);
        let out = self.fan_out();
        for row in z.data_mut().chunks_exact_mut(out) {
            for (v, b) in row.iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(z)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerCache {
    pub input: Tensor2D,
    pub batch_norm: Option<BatchNormCache>,
    /// Input to the activation (post normalization).
    pub pre_activation: Tensor2D,
    pub activation: Option<ActivationCache>,
}

/// Intermediates of one forward pass, tied to the network version that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    pub mode: Mode,
    pub version: u64,
    pub layers: Vec<LayerCache>,
}

impl ForwardCache {
    /// DEU evaluations in this pass that hit a clamp; their partials are
    /// capped rather than exact.
    pub fn clamped(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match &l.activation {
                Some(ActivationCache::Deu(grid)) => grid.clamped,
                _ => 0,
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Tensor2D,
    pub bias: Vec<f64>,
    /// Empty when the layer has no batch normalization.
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    /// Same layout as [`Activation::params_flat`].
    pub activation: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
}

impl Gradients {
    /// Weight-group gradients in [`Network::weight_params_flat`] order.
    pub fn weights_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in &self.layers {
            out.extend_from_slice(g.weights.data());
            out.extend_from_slice(&g.bias);
            out.extend_from_slice(&g.gamma);
            out.extend_from_slice(&g.beta);
        }
        out
    }

    /// Activation-group gradients in [`Network::activation_params_flat`] order.
    pub fn activation_flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|g| g.activation.iter().copied())
            .collect()
    }

    /// Locate the first non-finite entry, as `layer{i}.{name}`.
    pub fn first_non_finite(&self) -> Option<String> {
        for (i, g) in self.layers.iter().enumerate() {
            let groups: [(&str, &[f64]); 5] = [
                ("weights", g.weights.data()),
                ("bias", &g.bias),
                ("gamma", &g.gamma),
                ("beta", &g.beta),
                ("activation", &g.activation),
            ];
            for (name, v) in groups {
                if let Some(k) = v.iter().position(|x| !x.is_finite()) {
                    return Some(format!("layer{i}.{name}[{k}]"));
                }
            }
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<DenseLayer>,
    kernel: KernelConfig,
    version: u64,
}

impl Network {
    pub fn new(layers: Vec<DenseLayer>, kernel: KernelConfig) -> Result<Self> {
        kernel.validate()?;
        if layers.is_empty() {
            return Err(Error::InvalidWidths("network has no layers".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            l.validate()?;
            if i > 0 && layers[i - 1].fan_out() != l.fan_in() {
                return Err(Error::InvalidWidths(format!(
                    "layer {} outputs {} features but layer {} expects {}",
                    i - 1,
                    layers[i - 1].fan_out(),
                    i,
                    l.fan_in()
                )));
            }
        }
        let mut net = Network {
            layers,
            kernel,
            version: 0,
        };
        net.resolve_all()?;
        Ok(net)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    /// Mutable access invalidates every outstanding forward cache.
    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        self.version += 1;
        &mut self.layers
    }

    pub fn kernel(&self) -> &KernelConfig {
        &self.kernel
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].fan_in()];
        w.extend(self.layers.iter().map(DenseLayer::fan_out));
        w
    }

    pub fn activation_kind(&self) -> Option<ActivationKind> {
        self.layers
            .iter()
            .find_map(|l| l.activation.as_ref().map(Activation::kind))
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(DenseLayer::num_params).sum()
    }

    pub fn deu_units(&self) -> impl Iterator<Item = &DeuUnit> {
        self.layers.iter().flat_map(|l| match &l.activation {
            Some(Activation::Deu(units)) => units.as_slice(),
            _ => &[],
        })
    }

    /// Neurons per subspace, in [`SubspaceId::ALL`] order.
    pub fn subspace_counts(&self) -> Vec<(SubspaceId, usize)> {
        let mut counts: Vec<(SubspaceId, usize)> =
            SubspaceId::ALL.iter().map(|&id| (id, 0)).collect();
        for u in self.deu_units() {
            if let Some(slot) = counts.iter_mut().find(|(id, _)| *id == u.subspace) {
                slot.1 += 1;
            }
        }
        counts
    }

    /// Weights, biases and normalization scales/shifts, layer by layer.
    pub fn weight_params_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weights.data());
            out.extend_from_slice(&l.bias);
            if let Some(bn) = &l.batch_norm {
                out.extend_from_slice(&bn.gamma);
                out.extend_from_slice(&bn.beta);
            }
        }
        out
    }

    pub fn set_weight_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        let expected: usize = self
            .layers
            .iter()
            .map(|l| {
                l.weights.data().len()
                    + l.bias.len()
                    + l.batch_norm.as_ref().map_or(0, |b| 2 * b.features())
            })
            .sum();
        if flat.len() != expected {
            return Err(Error::shape(
                format!("{expected} weight parameters"),
                format!("{}", flat.len()),
            ));
        }
        let mut rest = flat;
        let mut take = |dst: &mut [f64]| {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        };
        for l in self.layers_mut() {
            take(l.weights.data_mut());
            take(&mut l.bias);
            if let Some(bn) = &mut l.batch_norm {
                take(&mut bn.gamma);
                take(&mut bn.beta);
            }
        }
        Ok(())
    }

    pub fn activation_params_flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .filter_map(|l| l.activation.as_ref())
            .flat_map(Activation::params_flat)
            .collect()
    }

    pub fn activation_frozen_mask(&self) -> Vec<bool> {
        self.layers
            .iter()
            .filter_map(|l| l.activation.as_ref())
            .flat_map(Activation::frozen_mask_flat)
            .collect()
    }

    /// Write back activation parameters; DEU neurons are re-resolved.
    pub fn set_activation_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        let expected: usize = self
            .layers
            .iter()
            .filter_map(|l| l.activation.as_ref())
            .map(Activation::num_params)
            .sum();
        if flat.len() != expected {
            return Err(Error::shape(
                format!("{expected} activation parameters"),
                format!("{}", flat.len()),
            ));
        }
        let cfg = self.kernel;
        let mut rest = flat;
        for l in self.layers_mut() {
            if let Some(act) = &mut l.activation {
                let (head, tail) = rest.split_at(act.num_params());
                act.set_params_flat(head, &cfg)?;
                rest = tail;
            }
        }
        Ok(())
    }

    /// Project every DEU neuron back onto a valid subspace.
    pub fn resolve_all(&mut self) -> Result<()> {
        let cfg = self.kernel;
        for l in self.layers_mut() {
            if let Some(Activation::Deu(units)) = &mut l.activation {
                for u in units {
                    u.resolve(&cfg)?;
                }
            }
        }
        Ok(())
    }

    pub fn forward(&mut self, x: &Tensor2D, mode: Mode) -> Result<(Tensor2D, ForwardCache)> {
        let cfg = self.kernel;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &mut self.layers {
            let z = layer.affine(&h)?;
            let (z, bn_cache) = match (&mut layer.batch_norm, mode) {
                (Some(bn), Mode::Train) => {
                    let (z, c) = bn.forward_train(&z)?;
                    (z, Some(c))
                }
                (Some(bn), Mode::Infer) => (bn.forward_infer(&z)?, None),
                (None, _) => (z, None),
            };
            let (out, act_cache) = match &layer.activation {
                Some(act) => {
                    let (y, c) = act.forward(&z, &cfg)?;
                    (y, Some(c))
                }
                None => (z.clone(), None),
            };
            if !out.all_finite() {
                return Err(Error::NonFinite(format!("layer {} output", caches.len())));
            }
            caches.push(LayerCache {
                input: std::mem::replace(&mut h, out),
                batch_norm: bn_cache,
                pre_activation: z,
                activation: act_cache,
            });
        }
        Ok((
            h,
            ForwardCache {
                mode,
                version: self.version,
                layers: caches,
            },
        ))
    }

    /// Inference-mode forward pass without bookkeeping.
    pub fn infer(&self, x: &Tensor2D) -> Result<Tensor2D> {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.affine(&h)?;
            if let Some(bn) = &layer.batch_norm {
                z = bn.forward_infer(&z)?;
            }
            h = match &layer.activation {
                Some(act) => act.forward(&z, &self.kernel)?.0,
                None => z,
            };
            if !h.all_finite() {
                return Err(Error::NonFinite(format!("layer {i} output")));
            }
        }
        Ok(h)
    }

    pub fn predict(&self, x: &Tensor2D) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.infer(x)?))
    }

    /// Gradients of the loss given `d_output = ∂L/∂logits`.
    pub fn backward(&self, cache: &ForwardCache, d_output: &Tensor2D) -> Result<Gradients> {
        if cache.mode != Mode::Train {
            return Err(Error::StaleCache(
                "backward needs a train-mode cache".into(),
            ));
        }
        if cache.version != self.version || cache.layers.len() != self.layers.len() {
            return Err(Error::StaleCache(format!(
                "cache from version {}, network at {}",
                cache.version, self.version
            )));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = d_output.clone();
        for (layer, lc) in self.layers.iter().zip(&cache.layers).rev() {
            if delta.shape() != lc.pre_activation.shape() {
                return Err(Error::shape(
                    format!("{:?}", lc.pre_activation.shape()),
                    format!("{:?}", delta.shape()),
                ));
            }
            let mut act_grads = Vec::new();
            if let (Some(act), Some(ac)) = (&layer.activation, &lc.activation) {
                let (d, g) = act.backward(&lc.pre_activation, ac, &delta)?;
                delta = d;
                act_grads = g;
            }
            let (mut gamma, mut beta) = (Vec::new(), Vec::new());
            if let Some(bn) = &layer.batch_norm {
                let bc = lc
                    .batch_norm
                    .as_ref()
                    .ok_or_else(|| Error::StaleCache("missing normalization statistics".into()))?;
                let (d, dg, db) = bn.backward(bc, &delta)?;
                delta = d;
                gamma = dg;
                beta = db;
            }
            let weights = matmul_tn(&delta, &lc.input);
            let out = layer.fan_out();
            let mut bias = vec![0.0; out];
            for row in delta.data().chunks_exact(out) {
                for (b, d) in bias.iter_mut().zip(row) {
                    *b += d;
                }
            }
            let next = matmul_nn(&delta, &layer.weights);
            grads.push(LayerGrads {
                weights,
                bias,
                gamma,
                beta,
                activation: act_grads,
            });
            delta = next;
        }
        grads.reverse();
        Ok(Gradients { layers: grads })
    }

    /// Forward in train mode, loss, backward.
    pub fn loss_and_gradients(
        &mut self,
        x: &Tensor2D,
        labels: &[usize],
    ) -> Result<(f64, Tensor2D, Gradients)> {
        let (logits, cache) = self.forward(x, Mode::Train)?;
        let (loss, d) = softmax_cross_entropy(&logits, labels)?;
        let grads = self.backward(&cache, &d)?;
        Ok((loss, logits, grads))
    }
}

/// Seeded initialization: He-uniform weights, zero biases, and per-kind
/// activation defaults. Hidden layers get batch normalization when requested.
pub fn init_network(
    widths: &[usize],
    kind: ActivationKind,
    seed: u64,
    cfg: &KernelConfig,
    batch_norm: bool,
) -> Result<Network> {
    cfg.validate()?;
    if widths.len() < 2 {
        return Err(Error::InvalidWidths(format!(
            "need at least input and output widths, got {widths:?}"
        )));
    }
    if widths.contains(&0) {
        return Err(Error::InvalidWidths(format!("zero width in {widths:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = widths.len() - 1;
    let mut layers = Vec::with_capacity(n);
    for (i, pair) in widths.windows(2).enumerate() {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let limit = (6.0 / fan_in as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit);
        let data = (0..fan_in * fan_out)
            .map(|_| dist.sample(&mut rng))
            .collect();
        let weights = Tensor2D::from_vec(fan_out, fan_in, data)?;
        let hidden = i + 1 < n;
        let activation = if hidden {
            Some(match kind {
                ActivationKind::Deu => {
                    let mut units = Vec::with_capacity(fan_out);
                    for _ in 0..fan_out {
                        let mut coef = || loop {
                            let v = rng.gen_range(cfg.epsilon..1.0);
                            if v > cfg.epsilon {
                                break v;
                            }
                        };
                        let (a, b, c) = (coef(), coef(), coef());
                        units.push(DeuUnit::new(DeuParams::new(a, b, c, 0.0, 0.0), cfg)?);
                    }
                    Activation::Deu(units)
                }
                ActivationKind::Relu => Activation::Relu,
                ActivationKind::Prelu => Activation::Prelu(vec![0.25; fan_out]),
                ActivationKind::Swish => Activation::Swish(vec![1.0; fan_out]),
            })
        } else {
            None
        };
        layers.push(DenseLayer {
            weights,
            bias: vec![0.0; fan_out],
            batch_norm: (hidden && batch_norm).then(|| BatchNorm::new(fan_out)),
            activation,
        });
    }
    Network::new(layers, *cfg)
}
