//! Datasets: IDX image files, labeled CSV, synthetic 2-D problems, and
//! seeded mini-batching.

mod batch;
mod csv_file;
mod idx;
mod synthetic;

pub use batch::{Batch, BatchIterator};
pub use csv_file::{load_csv, load_csv_like};
pub use idx::{load_idx, load_idx_dir, IdxSplit};
pub use synthetic::{make_synthetic, SyntheticKind};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor2D;

/// Per-feature affine map applied at load time: `stored = (raw − shift) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalization {
    pub fn identity(features: usize) -> Self {
        Normalization {
            shift: vec![0.0; features],
            scale: vec![1.0; features],
        }
    }

    pub fn apply(&self, x: &mut Tensor2D) {
        let d = x.cols();
        for row in x.data_mut().chunks_exact_mut(d) {
            for ((v, s), k) in row.iter_mut().zip(&self.shift).zip(&self.scale) {
                *v = (*v - s) / k;
            }
        }
    }

    /// Map stored features back to raw units.
    pub fn invert(&self, x: &Tensor2D) -> Tensor2D {
        let d = x.cols();
        let mut out = x.clone();
        for row in out.data_mut().chunks_exact_mut(d) {
            for ((v, s), k) in row.iter_mut().zip(&self.shift).zip(&self.scale) {
                *v = *v * k + s;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Tensor2D,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub normalization: Normalization,
    /// Original label strings by class index, when the source had them.
    pub class_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(
        features: Tensor2D,
        labels: Vec<usize>,
        num_classes: usize,
        normalization: Normalization,
    ) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::CountMismatch {
                images: features.rows(),
                labels: labels.len(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: num_classes,
            });
        }
        if !features.all_finite() {
            return Err(Error::NonFinite("dataset features".into()));
        }
        if normalization.shift.len() != features.cols()
            || normalization.scale.len() != features.cols()
        {
            return Err(Error::shape(
                format!("{} normalization entries", features.cols()),
                format!("{}", normalization.shift.len()),
            ));
        }
        Ok(Dataset {
            features,
            labels,
            num_classes,
            normalization,
            class_names: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            normalization: self.normalization.clone(),
            class_names: self.class_names.clone(),
        }
    }

    pub fn batches(&self, batch_size: usize, seed: u64, epoch: u64) -> Result<BatchIterator<'_>> {
        BatchIterator::new(self, batch_size, seed, epoch)
    }
}
