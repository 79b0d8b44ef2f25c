use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use deu::data::{load_csv, load_csv_like, load_idx_dir, make_synthetic, Dataset};
use deu::nn::{init_network, Activation, ActivationKind, Network};
use deu::train::{self, EpochRecord, Evaluation, StepInfo, TrainObserver};
use deu::verify::{verify_kernel, VerifyConfig, VerifyReport};
use deu::Tensor2D;

use crate::checkpoint::Checkpoint;
use crate::config::{DatasetSpec, Settings};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

pub fn load_dataset(spec: &DatasetSpec) -> CliResult<(Dataset, Dataset)> {
    match spec {
        DatasetSpec::Idx { dir } => {
            let s = load_idx_dir(dir)?;
            Ok((s.train, s.test))
        }
        DatasetSpec::Csv {
            train,
            test,
            label_column,
        } => {
            let tr = load_csv(train, label_column)?;
            let te = load_csv_like(test, label_column, &tr)?;
            Ok((tr, te))
        }
        DatasetSpec::Synthetic {
            kind,
            n_train,
            n_test,
            noise,
            data_seed,
        } => Ok((
            make_synthetic(*kind, *n_train, *noise, *data_seed)?,
            make_synthetic(*kind, *n_test, *noise, data_seed.wrapping_add(1))?,
        )),
    }
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

/// Writes metrics, timing and checkpoints as epochs complete.
struct RunObserver<'a> {
    metrics: Option<(PathBuf, BufWriter<File>)>,
    timing: Option<(PathBuf, BufWriter<File>)>,
    checkpoint: Option<PathBuf>,
    seed: u64,
    failure: Option<CliError>,
    extra: &'a mut dyn TrainObserver,
}

impl RunObserver<'_> {
    fn record(&mut self, record: &EpochRecord, elapsed: Duration, net: &Network) -> CliResult<()> {
        let line = |w: &mut BufWriter<File>, p: &Path, s: String| {
            writeln!(w, "{s}")
                .and_then(|_| w.flush())
                .map_err(|e| CliError::io(p, e))
        };
        if let Some((p, w)) = &mut self.metrics {
            line(
                w,
                p,
                serde_json::to_string(record).expect("record serializes"),
            )?;
        }
        if let Some((p, w)) = &mut self.timing {
            let s =
                serde_json::json!({ "epoch": record.epoch, "wall_time_s": elapsed.as_secs_f64() })
                    .to_string();
            line(w, p, s)?;
        }
        if let Some(p) = &self.checkpoint {
            Checkpoint::from_network(net, self.seed, record.epoch).save(p)?;
        }
        log::info!(
            "epoch {} train_loss={:.4} train_acc={:.4} test_loss={:.4} test_acc={:.4} clamps={} ({:.1}s)",
            record.epoch,
            record.train_loss,
            record.train_acc,
            record.test_loss,
            record.test_acc,
            record.clamp_events,
            elapsed.as_secs_f64()
        );
        Ok(())
    }
}

impl TrainObserver for RunObserver<'_> {
    fn on_step(&mut self, info: &StepInfo, net: &Network) -> deu::Result<()> {
        self.extra.on_step(info, net)
    }

    fn on_epoch(
        &mut self,
        record: &EpochRecord,
        elapsed: Duration,
        net: &Network,
    ) -> deu::Result<()> {
        if let Err(e) = self.record(record, elapsed, net) {
            let msg = e.to_string();
            self.failure = Some(e);
            return Err(deu::Error::InvalidInput(msg));
        }
        self.extra.on_epoch(record, elapsed, net)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub records: Vec<EpochRecord>,
    pub network: Network,
}

pub fn build_network(s: &Settings, kind: ActivationKind, seed: u64) -> CliResult<Network> {
    Ok(init_network(&s.arch, kind, seed, &s.kernel, s.batch_norm)?)
}

/// Train per `settings`, writing the metrics stream and a checkpoint after
/// every epoch. On failure the last completed epoch's checkpoint remains.
pub fn run_train(settings: &Settings, extra: &mut dyn TrainObserver) -> CliResult<TrainOutcome> {
    let (train_set, test_set) = load_dataset(&settings.dataset)?;
    run_train_on(settings, &train_set, &test_set, extra)
}

pub fn run_train_on(
    settings: &Settings,
    train_set: &Dataset,
    test_set: &Dataset,
    extra: &mut dyn TrainObserver,
) -> CliResult<TrainOutcome> {
    let mut net = build_network(settings, settings.activation, settings.train.seed)?;
    let open = |p: &Option<PathBuf>| -> CliResult<Option<(PathBuf, BufWriter<File>)>> {
        p.as_ref().map(|p| Ok((p.clone(), create(p)?))).transpose()
    };
    let mut obs = RunObserver {
        metrics: open(&settings.metrics_out)?,
        timing: open(&settings.timing_out)?,
        checkpoint: settings.checkpoint_out.clone(),
        seed: settings.train.seed,
        failure: None,
        extra,
    };
    match train::train(&mut net, train_set, test_set, &settings.train, &mut obs) {
        Ok(records) => Ok(TrainOutcome {
            records,
            network: net,
        }),
        Err(e) => Err(obs.failure.take().unwrap_or_else(|| e.into())),
    }
}

pub fn run_eval(checkpoint: &Path, dataset: &DatasetSpec, split: Split) -> CliResult<Evaluation> {
    let net = Checkpoint::load(checkpoint)?.to_network()?;
    let (tr, te) = load_dataset(dataset)?;
    let ds = match split {
        Split::Train => tr,
        Split::Test => te,
    };
    Ok(train::evaluate(&net, &ds)?)
}

pub fn format_eval(e: &Evaluation) -> String {
    format!("accuracy {:.4}\nloss {}\n", e.accuracy, e.loss)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InspectRequest {
    /// Index among layers that carry an activation.
    pub layer: usize,
    pub neuron: usize,
    pub t_min: f64,
    pub t_max: f64,
    pub samples: usize,
}

/// Sampled activation curve of one neuron as CSV text.
pub fn inspect(net: &Network, req: &InspectRequest) -> CliResult<String> {
    let out_of_range = |m: String| CliError::new("out_of_range", m);
    if req.samples < 2 {
        return Err(CliError::new(
            "invalid_input",
            format!("samples must be >= 2, got {}", req.samples),
        ));
    }
    if !(req.t_min.is_finite() && req.t_max.is_finite() && req.t_min < req.t_max) {
        return Err(CliError::new("invalid_input", "need finite t_min < t_max"));
    }
    let hidden: Vec<_> = net
        .layers()
        .iter()
        .filter(|l| l.activation.is_some())
        .collect();
    let layer = hidden.get(req.layer).ok_or_else(|| {
        out_of_range(format!(
            "layer {} (network has {} activation layers)",
            req.layer,
            hidden.len()
        ))
    })?;
    let width = layer.fan_out();
    if req.neuron >= width {
        return Err(out_of_range(format!(
            "neuron {} (layer has {width})",
            req.neuron
        )));
    }
    let j = req.neuron;
    let (unit, header, subspace) = match layer.activation.as_ref().expect("filtered") {
        Activation::Deu(u) => {
            let p = u[j].params;
            (
                Activation::Deu(vec![u[j]]),
                format!(
                    "# a={} b={} c={} c1={} c2={} subspace={}",
                    p.a, p.b, p.c, p.c1, p.c2, u[j].subspace
                ),
                u[j].subspace.to_string(),
            )
        }
        Activation::Relu => (
            Activation::Relu,
            "# kind=relu subspace=relu".to_string(),
            "relu".to_string(),
        ),
        Activation::Prelu(a) => (
            Activation::Prelu(vec![a[j]]),
            format!("# kind=prelu alpha={} subspace=prelu", a[j]),
            "prelu".to_string(),
        ),
        Activation::Swish(b) => (
            Activation::Swish(vec![b[j]]),
            format!("# kind=swish beta={} subspace=swish", b[j]),
            "swish".to_string(),
        ),
    };
    let n = req.samples;
    let ts: Vec<f64> = (0..n)
        .map(|i| {
            if i + 1 == n {
                req.t_max
            } else {
                req.t_min + (req.t_max - req.t_min) * i as f64 / (n - 1) as f64
            }
        })
        .collect();
    let t = Tensor2D::from_vec(n, 1, ts.clone())?;
    let (y, cache) = unit.forward(&t, net.kernel())?;
    let (dy, _) = unit.backward(&t, &cache, &Tensor2D::from_vec(n, 1, vec![1.0; n])?)?;
    let mut out = String::new();
    writeln!(out, "{header}").unwrap();
    writeln!(out, "t,y,dy_dt,subspace").unwrap();
    for (i, t) in ts.iter().enumerate() {
        writeln!(out, "{t},{},{},{subspace}", y.get(i, 0), dy.get(i, 0)).unwrap();
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub kind: ActivationKind,
    pub params: usize,
    pub accuracies: Vec<f64>,
}

impl CompareRow {
    pub fn median(&self) -> f64 {
        median(&self.accuracies)
    }
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<CompareRow>,
}

/// One model per (kind, seed). For a given seed every kind sees the same
/// data, initial weights and batch order.
pub fn run_compare(
    settings: &Settings,
    kinds: &[ActivationKind],
    seeds: &[u64],
) -> CliResult<CompareTable> {
    if kinds.is_empty() || seeds.is_empty() {
        return Err(CliError::new(
            "invalid_input",
            "compare needs at least one kind and one seed",
        ));
    }
    let (train_set, test_set) = load_dataset(&settings.dataset)?;
    let mut rows = Vec::with_capacity(kinds.len());
    for &kind in kinds {
        let mut accuracies = Vec::with_capacity(seeds.len());
        let mut params = 0;
        for &seed in seeds {
            let mut s = settings.clone();
            s.activation = kind;
            s.train.seed = seed;
            s.checkpoint_out = None;
            s.metrics_out = None;
            s.timing_out = None;
            let out = run_train_on(&s, &train_set, &test_set, &mut ())?;
            params = out.network.num_params();
            let acc = out
                .records
                .last()
                .expect("epoch 0 is always recorded")
                .test_acc;
            log::info!("compare kind={kind} seed={seed} test_acc={acc:.4}");
            accuracies.push(acc);
        }
        rows.push(CompareRow {
            kind,
            params,
            accuracies,
        });
    }
    Ok(CompareTable {
        seeds: seeds.to_vec(),
        rows,
    })
}

impl CompareTable {
    pub fn row(&self, kind: ActivationKind) -> Option<&CompareRow> {
        self.rows.iter().find(|r| r.kind == kind)
    }

    fn header(&self) -> Vec<String> {
        let mut h = vec!["kind".to_string(), "params".into(), "median".into()];
        h.extend(self.seeds.iter().map(|s| format!("seed_{s}")));
        h
    }

    fn cells(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                let mut c = vec![
                    r.kind.to_string(),
                    r.params.to_string(),
                    format!("{:.4}", r.median()),
                ];
                c.extend(r.accuracies.iter().map(|a| format!("{a:.4}")));
                c
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header().join(",");
        out.push('\n');
        for c in self.cells() {
            out.push_str(&c.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut all = vec![self.header()];
        all.extend(self.cells());
        let widths: Vec<usize> = (0..all[0].len())
            .map(|i| all.iter().map(|r| r[i].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &all {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| {
                    if i == 0 {
                        format!("{c:<w$}")
                    } else {
                        format!("{c:>w$}")
                    }
                })
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}

pub fn run_verify(draws: usize, seed: u64) -> CliResult<VerifyReport> {
    if draws == 0 {
        return Err(CliError::new("invalid_input", "draws must be >= 1"));
    }
    let cfg = VerifyConfig {
        draws_per_subspace: draws,
        seed,
        ..VerifyConfig::default()
    };
    Ok(verify_kernel(&cfg)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use deu::data::SyntheticKind;
    use deu::nn::{DenseLayer, DeuUnit};
    use deu::{DeuParams, KernelConfig};

    fn single(params: DeuParams) -> Network {
        let k = KernelConfig::default();
        let layers = vec![
            DenseLayer {
                weights: Tensor2D::from_vec(1, 1, vec![1.0]).unwrap(),
                bias: vec![0.0],
                batch_norm: None,
                activation: Some(Activation::Deu(vec![DeuUnit::new(params, &k).unwrap()])),
            },
            DenseLayer {
                weights: Tensor2D::from_vec(1, 1, vec![1.0]).unwrap(),
                bias: vec![0.0],
                batch_norm: None,
                activation: None,
            },
        ];
        Network::new(layers, k).unwrap()
    }

    fn rows(csv: &str) -> Vec<Vec<String>> {
        csv.lines()
            .skip(2)
            .map(|l| l.split(',').map(String::from).collect())
            .collect()
    }

    #[test]
    fn inspect_relu_pinned_neuron() {
        let net = single(DeuParams::relu());
        let req = InspectRequest {
            layer: 0,
            neuron: 0,
            t_min: -1.0,
            t_max: 1.0,
            samples: 41,
        };
        let csv = inspect(&net, &req).unwrap();
        let mut lines = csv.lines();
        assert!(lines
            .next()
            .unwrap()
            .starts_with("# a=0 b=1 c=0 c1=0 c2=0 subspace=DampingOnly"));
        assert_eq!(lines.next().unwrap(), "t,y,dy_dt,subspace");
        let r = rows(&csv);
        assert_eq!(r.len(), 41);
        for row in r {
            let t: f64 = row[0].parse().unwrap();
            let y: f64 = row[1].parse().unwrap();
            assert_eq!(y, t.max(0.0));
        }
    }

    #[test]
    fn inspect_undamped_oscillator() {
        let net = single(DeuParams::new(1.0, 0.0, 1.0, 0.0, 0.0));
        let req = InspectRequest {
            layer: 0,
            neuron: 0,
            t_min: 0.0,
            t_max: 2.0 * std::f64::consts::PI,
            samples: 100,
        };
        for row in rows(&inspect(&net, &req).unwrap()) {
            let t: f64 = row[0].parse().unwrap();
            let y: f64 = row[1].parse().unwrap();
            let dy: f64 = row[2].parse().unwrap();
            let want = if t > 0.0 { 1.0 - t.cos() } else { 0.0 };
            assert!((y - want).abs() < 1e-12, "t={t}: {y} vs {want}");
            if t > 0.0 {
                assert!((dy - t.sin()).abs() < 1e-12);
            }
            assert_eq!(row[3], "NoDamping/Oscillatory");
        }
    }

    #[test]
    fn inspect_bounds() {
        let net = single(DeuParams::relu());
        let ok = InspectRequest {
            layer: 0,
            neuron: 0,
            t_min: -1.0,
            t_max: 1.0,
            samples: 2,
        };
        assert_eq!(rows(&inspect(&net, &ok).unwrap()).len(), 2);
        for bad in [
            InspectRequest { layer: 1, ..ok },
            InspectRequest { neuron: 1, ..ok },
            InspectRequest { samples: 1, ..ok },
            InspectRequest { t_max: -2.0, ..ok },
        ] {
            assert!(inspect(&net, &bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[0.91, 0.93, 0.92]), 0.92);
        assert_eq!(median(&[0.5]), 0.5);
        assert_eq!(median(&[0.25, 0.75]), 0.5);
    }

    fn spirals_settings() -> Settings {
        let mut raw = crate::config::RawConfig::default();
        raw.set("dataset", "spirals");
        raw.set("arch", "2-6-2");
        raw.set("n_train", "64");
        raw.set("n_test", "32");
        raw.set("epochs", "2");
        raw.set("batch_size", "16");
        raw.settings().unwrap()
    }

    #[test]
    fn compare_table_shape_and_param_counts() {
        let s = spirals_settings();
        let t = run_compare(&s, &[ActivationKind::Deu, ActivationKind::Relu], &[0, 1]).unwrap();
        assert_eq!(t.rows.len(), 2);
        let (deu, relu) = (
            t.row(ActivationKind::Deu).unwrap(),
            t.row(ActivationKind::Relu).unwrap(),
        );
        assert_eq!(deu.params - relu.params, 5 * 6);
        let csv = t.to_csv();
        assert_eq!(
            csv.lines().next().unwrap(),
            "kind,params,median,seed_0,seed_1"
        );
        assert_eq!(csv.lines().count(), 3);
        assert_eq!(t.to_text().lines().count(), 3);

        let one = run_compare(&s, &[ActivationKind::Swish], &[4]).unwrap();
        assert_eq!(one.rows.len(), 1);
        assert_eq!(one.rows[0].median(), one.rows[0].accuracies[0]);
        assert!(run_compare(&s, &[], &[0]).is_err());
    }

    #[test]
    fn compare_uses_a_separate_test_draw() {
        let s = spirals_settings();
        let (tr, te) = load_dataset(&s.dataset).unwrap();
        assert_ne!(tr.features.row(0), te.features.row(0));
        assert!(matches!(
            s.dataset,
            DatasetSpec::Synthetic {
                kind: SyntheticKind::Spirals,
                ..
            }
        ));
    }
}
