use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor2D;

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub features: Tensor2D,
    pub labels: Vec<usize>,
}

/// One epoch of shuffled mini-batches. The order depends only on
/// `(seed, epoch)`; the final partial batch is kept.
#[derive(Debug, Clone)]
pub struct BatchIterator<'a> {
    dataset: &'a Dataset,
    batch_size: usize,
    order: Vec<usize>,
    pos: usize,
    min_batch: usize,
}

impl<'a> BatchIterator<'a> {
    pub fn new(dataset: &'a Dataset, batch_size: usize, seed: u64, epoch: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::InvalidParameter {
                name: "batch_size",
                value: 0.0,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch);
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut rng);
        Ok(BatchIterator {
            dataset,
            batch_size,
            order,
            pos: 0,
            min_batch: 1,
        })
    }

    /// Drop a trailing batch smaller than `min` (batch normalization needs 2).
    pub fn min_batch(mut self, min: usize) -> Self {
        self.min_batch = min.max(1);
        self
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

impl Iterator for BatchIterator<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        let rest = self.order.len() - self.pos;
        if rest == 0 {
            return None;
        }
        let take = rest.min(self.batch_size);
        if take < self.min_batch {
            log::info!(
                "dropping trailing batch of {take} sample(s), below minimum {}",
                self.min_batch
            );
            self.pos = self.order.len();
            return None;
        }
        let indices = self.order[self.pos..self.pos + take].to_vec();
        self.pos += take;
        Some(Batch {
            features: self.dataset.features.select_rows(&indices),
            labels: indices.iter().map(|&i| self.dataset.labels[i]).collect(),
            indices,
        })
    }
}
