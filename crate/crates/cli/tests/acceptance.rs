//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Runs as a plain binary (no libtest harness).

use std::collections::HashMap;
use std::env;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use deu::data::{load_idx_dir, Dataset};
use deu::nn::{init_network, softmax_cross_entropy, Activation, ActivationKind, Mode, Network};
use deu::train::{self, StepInfo, TrainObserver};
use deu::verify::{verify_kernel, VerifyConfig};
use deu::{eval, resolve_subspace, DeuParams, KernelConfig, Tensor2D};
use deu_cli::commands::run_train_on;
use deu_cli::{Checkpoint, RawConfig, Settings};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn report(results: &mut Vec<bool>, n: usize, title: &str, o: Outcome) {
    println!(
        "criterion {n} {} {title}: {}",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail
    );
    results.push(o.pass);
}

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn data_dir(var: &str, default: &str) -> PathBuf {
    env::var_os(var)
        .map(PathBuf::from)
        .unwrap_or_else(|| workspace().join("data").join(default))
}

fn deu_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_deu"))
}

// 1 ------------------------------------------------------------------------

fn kernel_oracles() -> Outcome {
    let start = Instant::now();
    let out = deu_bin()
        .args(["verify-kernel", "--draws", "1000", "--seed", "0"])
        .output()
        .expect("run deu");
    let secs = start.elapsed().as_secs_f64();
    let text = String::from_utf8_lossy(&out.stdout);
    let lines = text.lines().filter(|l| l.starts_with("subspace=")).count();
    let all_pass = text
        .lines()
        .filter(|l| l.starts_with("subspace="))
        .all(|l| l.contains("status=PASS"));
    outcome(
        out.status.success() && all_pass && lines == 10 && secs < 120.0,
        format!(
            "exit={} subspace_lines={lines} all_pass={all_pass} runtime={secs:.1}s (limit 120s)",
            out.status
        ),
    )
}

// 2 ------------------------------------------------------------------------

fn five_point(f: impl Fn(f64) -> f64, h: f64) -> f64 {
    (-f(2.0 * h) + 8.0 * f(h) - 8.0 * f(-h) + f(-2.0 * h)) / (12.0 * h)
}

fn loss_of(net: &Network, x: &Tensor2D, y: &[usize]) -> f64 {
    let mut n = net.clone();
    let (logits, _) = n.forward(x, Mode::Train).unwrap();
    softmax_cross_entropy(&logits, y).unwrap().0
}

/// Worst relative error over every parameter, or `None` if the batch hits a clamp.
fn network_gradient_error(net: &Network, x: &Tensor2D, y: &[usize]) -> Option<f64> {
    let mut work = net.clone();
    let (logits, cache) = work.forward(x, Mode::Train).unwrap();
    if cache.clamped() > 0 {
        return None;
    }
    let (_, d) = softmax_cross_entropy(&logits, y).unwrap();
    let grads = work.backward(&cache, &d).unwrap();
    let h = 1e-5;
    let rel = |an: f64, fd: f64| (an - fd).abs() / an.abs().max(fd.abs()).max(1e-6);
    let mut worst: f64 = 0.0;
    for (li, layer) in net.layers().iter().enumerate() {
        let g = &grads.layers[li];
        for k in 0..layer.weights.data().len() {
            let fd = five_point(
                |e| {
                    let mut n = net.clone();
                    n.layers_mut()[li].weights.data_mut()[k] += e;
                    loss_of(&n, x, y)
                },
                h,
            );
            worst = worst.max(rel(g.weights.data()[k], fd));
        }
        for k in 0..layer.bias.len() {
            let fd = five_point(
                |e| {
                    let mut n = net.clone();
                    n.layers_mut()[li].bias[k] += e;
                    loss_of(&n, x, y)
                },
                h,
            );
            worst = worst.max(rel(g.bias[k], fd));
        }
        if let Some(act) = &layer.activation {
            let flat = act.params_flat();
            let frozen = act.frozen_mask_flat();
            for k in 0..flat.len() {
                if frozen[k] {
                    if g.activation[k] != 0.0 {
                        return Some(f64::INFINITY);
                    }
                    continue;
                }
                let fd = five_point(
                    |e| {
                        let mut n = net.clone();
                        let cfg = *n.kernel();
                        let mut p = flat.clone();
                        p[k] += e;
                        n.layers_mut()[li]
                            .activation
                            .as_mut()
                            .unwrap()
                            .set_params_flat(&p, &cfg)
                            .unwrap();
                        loss_of(&n, x, y)
                    },
                    h,
                );
                worst = worst.max(rel(g.activation[k], fd));
            }
        }
    }
    Some(worst)
}

fn gradient_suite() -> Outcome {
    let cfg = VerifyConfig {
        draws_per_subspace: 50,
        seed: 1,
        ..VerifyConfig::default()
    };
    let report = verify_kernel(&cfg).unwrap();
    let draws: usize = report.subspaces.iter().map(|s| s.draws).sum();
    let grad_failures: usize = report
        .subspaces
        .iter()
        .map(|s| s.grad_failures + s.errors)
        .sum();
    let worst_partial = report
        .subspaces
        .iter()
        .map(|s| s.worst_grad_overall())
        .fold(0.0, f64::max);

    let k = KernelConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x =
        Tensor2D::from_vec(16, 2, (0..32).map(|_| rng.gen_range(-0.75..0.75)).collect()).unwrap();
    let y: Vec<usize> = (0..16).map(|i| (i * 7 + 3) % 2).collect();
    let mut net_worst: f64 = 0.0;
    let mut checked = 0;
    for seed in 0..40 {
        let mut net = init_network(&[2, 8, 8, 2], ActivationKind::Deu, seed, &k, false).unwrap();
        for (li, l) in net.layers_mut().iter_mut().enumerate() {
            for (j, b) in l.bias.iter_mut().enumerate() {
                *b = 0.05 * ((li * 13 + j) as f64).cos();
            }
            if let Some(act) = &mut l.activation {
                let mut p = act.params_flat();
                for (i, v) in p.iter_mut().enumerate().filter(|(i, _)| i % 5 >= 3) {
                    *v = 0.005 * (i as f64 * 0.7).sin();
                }
                act.set_params_flat(&p, &k).unwrap();
            }
        }
        if let Some(e) = network_gradient_error(&net, &x, &y) {
            net_worst = net_worst.max(e);
            checked += 1;
            if checked == 3 {
                break;
            }
        }
    }
    outcome(
        draws == 500 && grad_failures == 0 && worst_partial < 1e-4 && checked == 3 && net_worst < 1e-4,
        format!(
            "kernel draws={draws} failures={grad_failures} worst_partial_rel_err={worst_partial:.2e}; \
             2-8-8-2 DEU networks checked={checked} worst_rel_err={net_worst:.2e} (tol 1e-4)"
        ),
    )
}

// 3 ------------------------------------------------------------------------

fn spot_checks() -> Outcome {
    let k = KernelConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut osc, mut quad): (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        let (a, c) = (rng.gen_range(0.1..2.0), rng.gen_range(0.1..2.0));
        let (c1, c2, t): (f64, f64, f64) = (
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-3.0..3.0),
        );
        let (p, id) = resolve_subspace(&DeuParams::new(a, 0.0, c, c1, c2), &k).unwrap();
        let got = eval(&p, id, t, &k).unwrap().y;
        let u = if t > 0.0 { 1.0 } else { 0.0 };
        let w = c.sqrt() * t / a.sqrt();
        let want = w.sin() * c2 + w.cos() * c1 - u / c * (w.cos() - 1.0);
        osc = osc.max((got - want).abs());

        let a = rng.gen_range(0.1..2.0);
        let (p, id) = resolve_subspace(&DeuParams::new(a, 0.0, 0.0, c1, c2), &k).unwrap();
        let got = eval(&p, id, t, &k).unwrap().y;
        let want = 0.5 * (u * t * t / a) + c1 * t + c2;
        quad = quad.max((got - want).abs());
    }
    outcome(
        osc < 1e-12 && quad < 1e-12,
        format!(
            "b=0,a·c>0 max_err={osc:.2e}; b=c=0 max_err={quad:.2e} (100 points each, tol 1e-12)"
        ),
    )
}

// 4 ------------------------------------------------------------------------

fn relu_recovery() -> Outcome {
    let k = KernelConfig::default();
    let (p, id) = resolve_subspace(&DeuParams::new(0.0, 1.0, 0.0, 0.0, 0.0), &k).unwrap();
    let mut scalar_ok = true;
    for i in 0..=2000 {
        let t = -10.0 + i as f64 * 0.01;
        scalar_ok &= eval(&p, id, t, &k).unwrap().y == t.max(0.0);
    }
    let mut net_ok = true;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x =
        Tensor2D::from_vec(32, 6, (0..192).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
    for bn in [false, true] {
        let mut relu = init_network(&[6, 12, 12, 3], ActivationKind::Relu, 5, &k, bn).unwrap();
        let mut pinned = relu.clone();
        for l in pinned.layers_mut() {
            if let Some(act) = &mut l.activation {
                let n = l.weights.rows();
                let flat: Vec<f64> = (0..n).flat_map(|_| [0.0, 1.0, 0.0, 0.0, 0.0]).collect();
                let mut deu = Activation::Deu(vec![
                    deu::nn::DeuUnit::new(DeuParams::relu(), &k)
                        .unwrap();
                    n
                ]);
                deu.set_params_flat(&flat, &k).unwrap();
                *act = deu;
            }
        }
        let a = relu.forward(&x, Mode::Train).unwrap().0;
        let b = pinned.forward(&x, Mode::Train).unwrap().0;
        net_ok &= a
            .data()
            .iter()
            .zip(b.data())
            .all(|(u, v)| u.to_bits() == v.to_bits());
        let a = relu.infer(&x).unwrap();
        let b = pinned.infer(&x).unwrap();
        net_ok &= a
            .data()
            .iter()
            .zip(b.data())
            .all(|(u, v)| u.to_bits() == v.to_bits());
    }
    outcome(
        scalar_ok && net_ok,
        format!("scalar max(0,t) exact on 2001 points: {scalar_ok}; pinned network bit-exact (BN off/on, train/infer): {net_ok}"),
    )
}

// 5, 7, 8 ----------------------------------------------------------------

/// Checks the projection invariants after every optimizer step.
#[derive(Default)]
struct ProjectionWatch {
    steps: u64,
    violations: u64,
    first: Option<String>,
    frozen: HashMap<(usize, usize), [Option<f64>; 3]>,
}

impl ProjectionWatch {
    fn flag(&mut self, msg: String) {
        self.violations += 1;
        self.first.get_or_insert(msg);
    }
}

impl TrainObserver for ProjectionWatch {
    fn on_step(&mut self, info: &StepInfo, net: &Network) -> deu::Result<()> {
        self.steps += 1;
        let eps = net.kernel().epsilon;
        for (li, l) in net.layers().iter().enumerate() {
            let Some(Activation::Deu(units)) = &l.activation else {
                continue;
            };
            for (j, u) in units.iter().enumerate() {
                let p = u.params;
                let vals = [p.a, p.b, p.c];
                let mask = [p.frozen_a, p.frozen_b, p.frozen_c];
                if vals.iter().all(|&v| v == 0.0) {
                    self.flag(format!("step {} layer {li} unit {j}: a=b=c=0", info.step));
                }
                let seen = self.frozen.entry((li, j)).or_insert([None; 3]);
                let mut bad = Vec::new();
                for i in 0..3 {
                    if !mask[i] && vals[i].abs() < eps {
                        bad.push(format!("unfrozen coefficient {i} = {:e}", vals[i]));
                    }
                    match seen[i] {
                        Some(v) if !mask[i] || v.to_bits() != vals[i].to_bits() => {
                            bad.push(format!("frozen coefficient {i} changed"));
                        }
                        None if mask[i] => seen[i] = Some(vals[i]),
                        _ => {}
                    }
                }
                for b in bad {
                    self.flag(format!("step {} layer {li} unit {j}: {b}", info.step));
                }
            }
        }
        Ok(())
    }
}

fn mnist_settings(dir: &Path, kind: ActivationKind) -> Settings {
    let mut raw = RawConfig::default();
    raw.set("dataset", "idx");
    raw.set("data_dir", dir.display().to_string());
    raw.set("arch", "784-256-10");
    raw.set("activation", kind.name());
    raw.settings().unwrap()
}

struct MnistRuns {
    deu: Network,
    deu_acc: f64,
    test: Dataset,
    watch: ProjectionWatch,
}

fn mnist(results: &mut Vec<bool>) -> Option<MnistRuns> {
    let title = "MNIST / Fashion-MNIST desk scale";
    let (mdir, fdir) = (
        data_dir("DEU_MNIST_DIR", "mnist"),
        data_dir("DEU_FASHION_DIR", "fashion-mnist"),
    );
    let (m, f) = match (load_idx_dir(&mdir), load_idx_dir(&fdir)) {
        (Ok(m), Ok(f)) => (m, f),
        (m, f) => {
            let why = [m.err(), f.err()]
                .into_iter()
                .flatten()
                .map(|e| e.to_string())
                .collect::<Vec<_>>();
            report(
                results,
                5,
                title,
                outcome(false, format!("dataset unavailable: {}", why.join("; "))),
            );
            return None;
        }
    };
    let start = Instant::now();
    let mut watch = ProjectionWatch::default();
    let s = mnist_settings(&mdir, ActivationKind::Deu);
    let deu_run = run_train_on(&s, &m.train, &m.test, &mut watch).unwrap();
    let deu_acc = deu_run.records.last().unwrap().test_acc;
    let relu_run = run_train_on(
        &mnist_settings(&mdir, ActivationKind::Relu),
        &m.train,
        &m.test,
        &mut (),
    )
    .unwrap();
    let relu_acc = relu_run.records.last().unwrap().test_acc;
    let fash = run_train_on(
        &mnist_settings(&fdir, ActivationKind::Deu),
        &f.train,
        &f.test,
        &mut (),
    )
    .unwrap();
    let fash_acc = fash.records.last().unwrap().test_acc;
    let elapsed = start.elapsed();
    let gap = (relu_acc - deu_acc).abs();
    report(
        results,
        5,
        title,
        outcome(
            deu_acc >= 0.97 && gap <= 0.01 && fash_acc >= 0.86 && elapsed <= Duration::from_secs(45 * 60),
            format!(
                "MNIST DEU test_acc={:.2}% (need >=97.00), ReLU {:.2}% (|gap|={:.2} pts, need <=1.00), \
                 Fashion DEU {:.2}% (need >=86.00), runtime {:.0}s (limit 2700s)",
                100.0 * deu_acc,
                100.0 * relu_acc,
                100.0 * gap,
                100.0 * fash_acc,
                elapsed.as_secs_f64()
            ),
        ),
    );
    Some(MnistRuns {
        deu: deu_run.network,
        deu_acc,
        test: m.test,
        watch,
    })
}

fn projection(runs: Option<&MnistRuns>) -> Outcome {
    let Some(r) = runs else {
        return outcome(false, "MNIST run unavailable");
    };
    let w = &r.watch;
    let frozen: usize = w
        .frozen
        .values()
        .map(|s| s.iter().filter(|v| v.is_some()).count())
        .sum();
    outcome(
        w.steps > 0 && w.violations == 0,
        format!(
            "checked {} optimizer steps over 10 epochs; violations={}; coefficients frozen by the end={frozen}{}",
            w.steps,
            w.violations,
            w.first.as_deref().map(|f| format!("; first: {f}")).unwrap_or_default()
        ),
    )
}

fn diversity(runs: Option<&MnistRuns>) -> Outcome {
    let Some(r) = runs else {
        return outcome(false, "MNIST run unavailable");
    };
    let units: Vec<[f64; 5]> = match &r.deu.layers()[0].activation {
        Some(Activation::Deu(u)) => u.iter().map(|u| u.params.as_array()).collect(),
        _ => return outcome(false, "first hidden layer has no DEU"),
    };
    let mut max: f64 = 0.0;
    for i in 0..units.len() {
        for j in i + 1..units.len() {
            let d = units[i]
                .iter()
                .zip(&units[j])
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            max = max.max(d);
        }
    }
    outcome(
        max > 1e-3,
        format!(
            "max pairwise L∞ distance over {} neurons = {max:.4} (need > 1e-3)",
            units.len()
        ),
    )
}

// 6 ------------------------------------------------------------------------

fn compare(tmp: &Path) -> Outcome {
    let csv = tmp.join("compare.csv");
    let out = deu_bin()
        .args([
            "compare",
            "--dataset",
            "spirals",
            "--arch",
            "2-32-32-2",
            "--kinds",
            "deu,relu,prelu,swish",
            "--seeds",
            "0,1,2",
            "--out",
        ])
        .arg(&csv)
        .output()
        .expect("run deu");
    if !out.status.success() {
        return outcome(
            false,
            format!(
                "compare exited {}: {}",
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            ),
        );
    }
    let text = fs::read_to_string(&csv).unwrap_or_default();
    let medians: HashMap<String, f64> = text
        .lines()
        .skip(1)
        .filter_map(|l| {
            let c: Vec<&str> = l.split(',').collect();
            Some((c.first()?.to_string(), c.get(2)?.parse().ok()?))
        })
        .collect();
    let table_lines = String::from_utf8_lossy(&out.stdout).lines().count();
    let (Some(&d), Some(&r)) = (medians.get("deu"), medians.get("relu")) else {
        return outcome(false, "table lacks deu or relu rows");
    };
    let medians_line = ["deu", "relu", "prelu", "swish"]
        .iter()
        .map(|k| {
            format!(
                "{k}={:.2}%",
                100.0 * medians.get(*k).copied().unwrap_or(f64::NAN)
            )
        })
        .collect::<Vec<_>>()
        .join(" ");
    outcome(
        medians.len() == 4 && table_lines == 5 && d >= r - 0.01,
        format!("medians {medians_line}; need deu >= relu - 1.00 pts"),
    )
}

// 9 ------------------------------------------------------------------------

fn determinism(tmp: &Path, runs: Option<&MnistRuns>) -> Outcome {
    let train = |tag: &str| {
        let m = tmp.join(format!("metrics_{tag}.jsonl"));
        let c = tmp.join(format!("ck_{tag}.json"));
        let st = deu_bin()
            .args([
                "train",
                "--dataset",
                "spirals",
                "--arch",
                "2-16-16-2",
                "--activation",
                "deu",
                "--epochs",
                "5",
                "--batch-size",
                "32",
                "--seed",
                "7",
            ])
            .arg("--metrics-out")
            .arg(&m)
            .arg("--checkpoint-out")
            .arg(&c)
            .output()
            .expect("run deu");
        (st.status.success(), fs::read(&m).unwrap_or_default(), c)
    };
    let (ok1, m1, ck) = train("a");
    let (ok2, m2, _) = train("b");
    let identical = ok1 && ok2 && !m1.is_empty() && m1 == m2;

    let last_acc = String::from_utf8_lossy(&m1)
        .lines()
        .last()
        .and_then(|l| serde_json::from_str::<serde_json::Value>(l).ok())
        .and_then(|v| v["test_acc"].as_f64());
    let eval = || {
        deu_bin()
            .args(["eval", "--dataset", "spirals", "--checkpoint"])
            .arg(&ck)
            .output()
            .map(|o| String::from_utf8_lossy(&o.stdout).into_owned())
            .unwrap_or_default()
    };
    let (e1, e2) = (eval(), eval());
    let eval_consistent = e1 == e2
        && last_acc.is_some_and(|a| e1.lines().next() == Some(format!("accuracy {a:.4}").as_str()));

    let round_trip = match runs {
        None => false,
        Some(r) => {
            let path = tmp.join("mnist.json");
            Checkpoint::from_network(&r.deu, 0, 10).save(&path).unwrap();
            let back = Checkpoint::load(&path).unwrap().to_network().unwrap();
            let a = r.deu.infer(&r.test.features).unwrap();
            let b = back.infer(&r.test.features).unwrap();
            let before = train::evaluate(&r.deu, &r.test).unwrap();
            let after = train::evaluate(&back, &r.test).unwrap();
            a.data()
                .iter()
                .zip(b.data())
                .all(|(x, y)| x.to_bits() == y.to_bits())
                && before.loss.to_bits() == after.loss.to_bits()
                && after.accuracy == r.deu_acc
        }
    };
    outcome(
        identical && eval_consistent && round_trip,
        format!(
            "same-seed metrics byte-identical: {identical}; eval matches final metrics and repeats: {eval_consistent}; \
             MNIST checkpoint round-trip bit-identical: {round_trip}"
        ),
    )
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().expect("temp dir");
    let mut results = Vec::new();
    report(&mut results, 1, "kernel-oracle suite", kernel_oracles());
    report(&mut results, 2, "gradient suite", gradient_suite());
    report(&mut results, 3, "closed-form spot checks", spot_checks());
    report(&mut results, 4, "ReLU recovery", relu_recovery());
    let runs = mnist(&mut results);
    report(
        &mut results,
        6,
        "activation comparison on spirals",
        compare(tmp.path()),
    );
    report(
        &mut results,
        7,
        "projection invariants during MNIST training",
        projection(runs.as_ref()),
    );
    report(
        &mut results,
        8,
        "activation diversity",
        diversity(runs.as_ref()),
    );
    report(
        &mut results,
        9,
        "determinism and persistence",
        determinism(tmp.path(), runs.as_ref()),
    );
    let passed = results.iter().filter(|p| **p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
