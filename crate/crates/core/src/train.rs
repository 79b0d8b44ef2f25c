//! Mini-batch training and evaluation.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{accuracy, argmax_rows, softmax_cross_entropy, Mode, Network};
use crate::optim::{Optimizer, OptimizerConfig, StepStats};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 128,
            seed: 0,
            optimizer: OptimizerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

/// Per-epoch metrics. Epoch 0 is the untrained network evaluated in
/// inference mode; later epochs report running averages over the epoch's
/// mini-batches for the training columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    pub clamp_events: usize,
    pub clipped_steps: usize,
    /// DEU neurons per subspace (only subspaces with at least one neuron).
    pub subspaces: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub epoch: usize,
    /// Counts from 1 across the whole run.
    pub step: u64,
    pub loss: f64,
    pub clamped: usize,
    pub stats: StepStats,
}

/// Hooks into a training run. Returning an error aborts it.
pub trait TrainObserver {
    fn on_step(&mut self, _info: &StepInfo, _net: &Network) -> Result<()> {
        Ok(())
    }

    fn on_epoch(
        &mut self,
        _record: &EpochRecord,
        _elapsed: Duration,
        _net: &Network,
    ) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

const EVAL_CHUNK: usize = 1000;

/// Mean loss and accuracy in inference mode.
pub fn evaluate(net: &Network, ds: &Dataset) -> Result<Evaluation> {
    if ds.is_empty() {
        return Err(Error::InvalidInput(
            "cannot evaluate on an empty dataset".into(),
        ));
    }
    check_widths(net, ds)?;
    let mut loss = 0.0;
    let mut hits = 0usize;
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let x = ds.features.select_rows(chunk);
        let y: Vec<usize> = chunk.iter().map(|&i| ds.labels[i]).collect();
        let logits = net.infer(&x)?;
        loss += softmax_cross_entropy(&logits, &y)?.0 * chunk.len() as f64;
        hits += argmax_rows(&logits)
            .iter()
            .zip(&y)
            .filter(|(p, l)| p == l)
            .count();
    }
    Ok(Evaluation {
        loss: loss / ds.len() as f64,
        accuracy: hits as f64 / ds.len() as f64,
    })
}

pub fn check_widths(net: &Network, ds: &Dataset) -> Result<()> {
    let w = net.widths();
    let (input, output) = (w[0], w[w.len() - 1]);
    if input != ds.num_features() || output < ds.num_classes {
        return Err(Error::InvalidWidths(format!(
            "network {input}→{output} does not fit dataset with {} features and {} classes",
            ds.num_features(),
            ds.num_classes
        )));
    }
    Ok(())
}

fn subspace_map(net: &Network) -> BTreeMap<String, usize> {
    net.subspace_counts()
        .into_iter()
        .filter(|(_, n)| *n > 0)
        .map(|(id, n)| (id.to_string(), n))
        .collect()
}

/// Train `net` in place. Returns one record per epoch, starting at epoch 0.
pub fn train(
    net: &mut Network,
    train_set: &Dataset,
    test_set: &Dataset,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<Vec<EpochRecord>> {
    if cfg.batch_size == 0 {
        return Err(Error::InvalidParameter {
            name: "batch_size",
            value: 0.0,
        });
    }
    check_widths(net, train_set)?;
    check_widths(net, test_set)?;
    let mut opt = Optimizer::new(net, cfg.optimizer)?;
    let min_batch = if net.layers().iter().any(|l| l.batch_norm.is_some()) {
        2
    } else {
        1
    };
    let mut records = Vec::with_capacity(cfg.epochs + 1);

    let start = Instant::now();
    let tr = evaluate(net, train_set)?;
    let te = evaluate(net, test_set)?;
    let record = EpochRecord {
        epoch: 0,
        train_loss: tr.loss,
        train_acc: tr.accuracy,
        test_loss: te.loss,
        test_acc: te.accuracy,
        clamp_events: 0,
        clipped_steps: 0,
        subspaces: subspace_map(net),
    };
    observer.on_epoch(&record, start.elapsed(), net)?;
    records.push(record);

    let mut step = 0u64;
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let (mut loss_sum, mut hits, mut seen) = (0.0, 0usize, 0usize);
        let (mut clamp_events, mut clipped_steps) = (0usize, 0usize);
        for batch in train_set
            .batches(cfg.batch_size, cfg.seed, epoch as u64)?
            .min_batch(min_batch)
        {
            let (logits, cache) = net.forward(&batch.features, Mode::Train)?;
            let (loss, d) = softmax_cross_entropy(&logits, &batch.labels)?;
            let grads = net.backward(&cache, &d)?;
            let stats = opt.step(net, &grads)?;
            step += 1;
            let n = batch.labels.len();
            loss_sum += loss * n as f64;
            hits += (accuracy(&argmax_rows(&logits), &batch.labels) * n as f64).round() as usize;
            seen += n;
            clamp_events += cache.clamped();
            clipped_steps += stats.clipped as usize;
            let info = StepInfo {
                epoch,
                step,
                loss,
                clamped: cache.clamped(),
                stats,
            };
            observer.on_step(&info, net)?;
        }
        let te = evaluate(net, test_set)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / seen.max(1) as f64,
            train_acc: hits as f64 / seen.max(1) as f64,
            test_loss: te.loss,
            test_acc: te.accuracy,
            clamp_events,
            clipped_steps,
            subspaces: subspace_map(net),
        };
        observer.on_epoch(&record, start.elapsed(), net)?;
        records.push(record);
    }
    Ok(records)
}
