use std::f64::consts::PI;

use deu::data::{make_synthetic, SyntheticKind};
use deu::nn::{init_network, ActivationKind};
use deu::oracle::{integrate, IvpSpec};
use deu::train::{train, TrainConfig};
use deu::{eval, homogeneous_basis, resolve_subspace, DeuParams, KernelConfig, Regime, Structural};

fn y(a: f64, b: f64, c: f64, c1: f64, c2: f64, t: f64) -> f64 {
    let k = KernelConfig::default();
    let (p, id) = resolve_subspace(&DeuParams::new(a, b, c, c1, c2), &k).unwrap();
    eval(&p, id, t, &k).unwrap().y
}

#[test]
fn worked_values() {
    assert!((y(1.0, 0.0, 1.0, 0.0, 0.0, PI) - 2.0).abs() < 1e-14);
    assert!((y(2.0, 0.0, 0.0, 0.0, 0.0, 2.0) - 1.0).abs() < 1e-14);
    assert_eq!(y(0.7, 0.3, 0.4, 0.0, 0.0, -1.0), 0.0);
    assert!((y(1.0, 0.0, 1.0, 0.5, 0.0, 0.0) - 0.5).abs() < 1e-15);
    assert_eq!(y(0.0, 1.0, 0.0, 0.0, 0.0, 3.0), 3.0);
    assert_eq!(y(0.0, 1.0, 0.0, 0.0, 0.0, -3.0), 0.0);
}

#[test]
fn overdamped_step_response_matches_rk4() {
    let traj = integrate(&IvpSpec {
        a: 1.0,
        b: 3.0,
        c: 2.0,
        t0: 0.0,
        y0: 0.0,
        yprime0: 0.0,
        t_end: 1.0,
        step: 1e-4,
    })
    .unwrap();
    let (t, want) = *traj.last().unwrap();
    assert!((t - 1.0).abs() < 1e-12);
    assert!((y(1.0, 3.0, 2.0, 0.0, 0.0, 1.0) - want).abs() < 1e-9);
}

#[test]
fn first_order_basis_is_one_dimensional() {
    let k = KernelConfig::default();
    let (p, id) = resolve_subspace(&DeuParams::new(0.0, 1.0, 0.0, 0.0, 0.0), &k).unwrap();
    assert_eq!(id.structural, Structural::DampingOnly);
    assert_eq!(id.regime, Regime::NotApplicable);
    assert_eq!(homogeneous_basis(&p, id, 7.0, &k).unwrap(), (1.0, 0.0));
}

#[test]
fn deu_network_learns_moons() {
    let k = KernelConfig::default();
    let train_set = make_synthetic(SyntheticKind::Moons, 400, 0.1, 0).unwrap();
    let test_set = make_synthetic(SyntheticKind::Moons, 400, 0.1, 1).unwrap();
    let mut net = init_network(&[2, 16, 2], ActivationKind::Deu, 0, &k, false).unwrap();
    let cfg = TrainConfig {
        epochs: 30,
        batch_size: 32,
        ..TrainConfig::default()
    };
    let records = train(&mut net, &train_set, &test_set, &cfg, &mut ()).unwrap();
    let last = records.last().unwrap();
    assert!(last.test_acc > 0.8, "{}", last.test_acc);
}
