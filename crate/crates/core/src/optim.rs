//! Adam with separate learning rates for weights and activation parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Gradients, Network};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub lr_weights: f64,
    /// Activation-parameter learning rate is `lr_weights · lr_deu_scale`.
    pub lr_deu_scale: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub clip_deu_grad_norm: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr_weights: 1e-3,
            lr_deu_scale: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            clip_deu_grad_norm: Some(5.0),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |name: &'static str, value: f64| Err(Error::InvalidParameter { name, value });
        if !(self.lr_weights > 0.0 && self.lr_weights.is_finite()) {
            return bad("lr_weights", self.lr_weights);
        }
        if !(self.lr_deu_scale >= 0.0 && self.lr_deu_scale.is_finite()) {
            return bad("lr_deu_scale", self.lr_deu_scale);
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return bad(name, v);
            }
        }
        if self.eps_adam.is_nan() || self.eps_adam <= 0.0 {
            return bad("eps_adam", self.eps_adam);
        }
        if let Some(c) = self.clip_deu_grad_norm {
            if !(c > 0.0 && c.is_finite()) {
                return bad("clip_deu_grad_norm", c);
            }
        }
        Ok(())
    }

    pub fn lr_activation(&self) -> f64 {
        self.lr_weights * self.lr_deu_scale
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    Weights,
    Activation,
}

/// First and second moments for one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. Entries with `frozen[i]` keep their value
/// and their moments. Gradients are multiplied by `grad_scale` first.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    frozen: Option<&[bool]>,
    state: &mut AdamState,
    cfg: &OptimizerConfig,
    group: Group,
    grad_scale: f64,
) -> Result<()> {
    let n = params.len();
    if grads.len() != n
        || state.m.len() != n
        || state.v.len() != n
        || frozen.is_some_and(|f| f.len() != n)
    {
        return Err(Error::shape(
            format!("{n} entries"),
            format!("{} gradients", grads.len()),
        ));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        let name = match group {
            Group::Weights => "weights",
            Group::Activation => "activation",
        };
        return Err(Error::NonFiniteGradient(format!("{name}[{i}]")));
    }
    let lr = match group {
        Group::Weights => cfg.lr_weights,
        Group::Activation => cfg.lr_activation(),
    };
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..n {
        if frozen.is_some_and(|f| f[i]) {
            continue;
        }
        let g = grads[i] * grad_scale;
        let m = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        let v = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        state.m[i] = m;
        state.v[i] = v;
        params[i] -= lr * (m / bc1) / ((v / bc2).sqrt() + cfg.eps_adam);
    }
    Ok(())
}

/// What a single optimizer step did to the activation group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub activation_grad_norm: f64,
    pub clipped: bool,
}

/// Adam over a whole network: one state for the weight group and one for
/// the activation group.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    pub weights: AdamState,
    pub activation: AdamState,
}

impl Optimizer {
    pub fn new(net: &Network, config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Optimizer {
            config,
            weights: AdamState::new(net.weight_params_flat().len()),
            activation: AdamState::new(net.activation_params_flat().len()),
        })
    }

    /// Apply one update and re-resolve every DEU neuron.
    pub fn step(&mut self, net: &mut Network, grads: &Gradients) -> Result<StepStats> {
        if let Some(name) = grads.first_non_finite() {
            return Err(Error::NonFiniteGradient(name));
        }
        let gw = grads.weights_flat();
        let ga = grads.activation_flat();
        let mut w = net.weight_params_flat();
        let mut a = net.activation_params_flat();
        let frozen = net.activation_frozen_mask();

        let norm = ga
            .iter()
            .zip(&frozen)
            .filter(|(_, f)| !**f)
            .map(|(g, _)| g * g)
            .sum::<f64>()
            .sqrt();
        let (scale, clipped) = match self.config.clip_deu_grad_norm {
            Some(c) if norm > c => (c / norm, true),
            _ => (1.0, false),
        };

        adam_step(
            &mut w,
            &gw,
            None,
            &mut self.weights,
            &self.config,
            Group::Weights,
            1.0,
        )?;
        adam_step(
            &mut a,
            &ga,
            Some(&frozen),
            &mut self.activation,
            &self.config,
            Group::Activation,
            scale,
        )?;
        net.set_weight_params_flat(&w)?;
        net.set_activation_params_flat(&a)?;
        Ok(StepStats {
            activation_grad_norm: norm,
            clipped,
        })
    }
}

/// Re-resolve every DEU neuron; a no-op on an already resolved network.
pub fn resolve_all(net: &mut Network) -> Result<()> {
    net.resolve_all()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{DeuParams, KernelConfig};
    use crate::nn::{init_network, Activation, ActivationKind, DeuUnit, Mode};
    use crate::tensor::Tensor2D;
    use proptest::prelude::*;

    fn cfg() -> OptimizerConfig {
        OptimizerConfig::default()
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = [0.5];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[1.0], None, &mut s, &cfg(), Group::Weights, 1.0).unwrap();
        assert!((p[0] - (0.5 - 0.001)).abs() < 1e-9);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = [0.5, -2.0, 3.0];
        let mut s = AdamState::new(3);
        for _ in 0..10 {
            adam_step(&mut p, &[0.0; 3], None, &mut s, &cfg(), Group::Weights, 1.0).unwrap();
        }
        assert_eq!(p, [0.5, -2.0, 3.0]);
    }

    #[test]
    fn frozen_entries_keep_value_and_moments() {
        let mut p = [0.0, 1.0];
        let mut s = AdamState::new(2);
        adam_step(
            &mut p,
            &[3.0, 3.0],
            Some(&[true, false]),
            &mut s,
            &cfg(),
            Group::Activation,
            1.0,
        )
        .unwrap();
        assert_eq!(p[0], 0.0);
        assert_eq!((s.m[0], s.v[0]), (0.0, 0.0));
        assert!(p[1] < 1.0);
    }

    #[test]
    fn non_finite_gradient_names_the_entry() {
        let mut p = [0.0; 3];
        let mut s = AdamState::new(3);
        let err = adam_step(
            &mut p,
            &[0.0, f64::NAN, 0.0],
            None,
            &mut s,
            &cfg(),
            Group::Activation,
            1.0,
        )
        .unwrap_err();
        assert!(matches!(&err, Error::NonFiniteGradient(n) if n == "activation[1]"));
        assert_eq!(p, [0.0; 3]);
        assert_eq!(s.step, 0);
    }

    proptest! {
        #[test]
        fn update_sign_is_scale_invariant_at_step_one(g in proptest::collection::vec(-5.0f64..5.0, 1..20)) {
            let mut p1 = vec![0.0; g.len()];
            let mut p2 = p1.clone();
            let g10: Vec<f64> = g.iter().map(|v| v * 10.0).collect();
            adam_step(&mut p1, &g, None, &mut AdamState::new(g.len()), &cfg(), Group::Weights, 1.0).unwrap();
            adam_step(&mut p2, &g10, None, &mut AdamState::new(g.len()), &cfg(), Group::Weights, 1.0).unwrap();
            for (a, b) in p1.iter().zip(&p2) {
                prop_assert_eq!(a.signum(), b.signum());
                prop_assert_eq!(*a == 0.0, *b == 0.0);
            }
        }
    }

    fn toy() -> (Network, Tensor2D, Vec<usize>) {
        let k = KernelConfig::default();
        let net = init_network(&[3, 6, 2], ActivationKind::Deu, 7, &k, true).unwrap();
        let x =
            Tensor2D::from_vec(8, 3, (0..24).map(|i| ((i as f64) * 0.37).sin()).collect()).unwrap();
        let y = (0..8).map(|i| i % 2).collect();
        (net, x, y)
    }

    #[test]
    fn zero_deu_scale_keeps_activation_parameters() {
        let (mut net, x, y) = toy();
        let before = net.activation_params_flat();
        let w_before = net.weight_params_flat();
        let mut opt = Optimizer::new(
            &net,
            OptimizerConfig {
                lr_deu_scale: 0.0,
                ..cfg()
            },
        )
        .unwrap();
        for _ in 0..20 {
            let (_, _, g) = net.loss_and_gradients(&x, &y).unwrap();
            opt.step(&mut net, &g).unwrap();
        }
        assert_eq!(net.activation_params_flat(), before);
        assert_ne!(net.weight_params_flat(), w_before);
    }

    #[test]
    fn clipping_caps_the_activation_step() {
        let (mut net, x, y) = toy();
        let mut opt = Optimizer::new(
            &net,
            OptimizerConfig {
                clip_deu_grad_norm: Some(1e-6),
                ..cfg()
            },
        )
        .unwrap();
        let (_, _, g) = net.loss_and_gradients(&x, &y).unwrap();
        let stats = opt.step(&mut net, &g).unwrap();
        assert!(stats.clipped);
        let scaled: f64 = opt
            .activation
            .m
            .iter()
            .map(|m| (m / 0.1).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!((scaled - 1e-6).abs() < 1e-12);
    }

    #[test]
    fn steps_keep_coefficients_projected() {
        let (mut net, x, y) = toy();
        // Push one coefficient near the threshold so the projection is exercised.
        let k = *net.kernel();
        if let Some(Activation::Deu(units)) = &mut net.layers_mut()[0].activation {
            units[0] = DeuUnit::new(DeuParams::new(0.0011, 0.5, 0.5, 0.0, 0.0), &k).unwrap();
        }
        let mut opt = Optimizer::new(
            &net,
            OptimizerConfig {
                lr_weights: 0.05,
                lr_deu_scale: 1.0,
                ..cfg()
            },
        )
        .unwrap();
        let mut frozen_seen = vec![false; net.activation_params_flat().len()];
        for _ in 0..50 {
            let (_, _, g) = net.loss_and_gradients(&x, &y).unwrap();
            let before = net.activation_params_flat();
            opt.step(&mut net, &g).unwrap();
            let after = net.activation_params_flat();
            let mask = net.activation_frozen_mask();
            for i in 0..after.len() {
                if frozen_seen[i] {
                    assert_eq!(after[i], before[i]);
                }
                if i % 5 < 3 && !mask[i] {
                    assert!(after[i] == 0.0 || after[i].abs() >= k.epsilon);
                }
                frozen_seen[i] |= mask[i];
            }
            for u in net.deu_units() {
                assert!(!(u.params.a == 0.0 && u.params.b == 0.0 && u.params.c == 0.0));
            }
            let mut probe = net.clone();
            probe.forward(&x, Mode::Train).unwrap();
        }
    }

    #[test]
    fn resolve_all_projects_small_coefficients() {
        let k = KernelConfig::default();
        let mut net = init_network(&[2, 3, 2], ActivationKind::Deu, 1, &k, false).unwrap();
        let mut a = net.activation_params_flat();
        a[0] = 1e-5;
        // Bypass the resolving setter to plant an unresolved value.
        if let Some(Activation::Deu(units)) = &mut net.layers_mut()[0].activation {
            units[0].params.a = a[0];
        }
        resolve_all(&mut net).unwrap();
        let u = net.deu_units().next().unwrap();
        assert_eq!(u.params.a, 0.0);
        assert!(u.params.frozen_a);
        let snapshot = net.clone();
        resolve_all(&mut net).unwrap();
        assert_eq!(net.layers(), snapshot.layers());
    }
}
