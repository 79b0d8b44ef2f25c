use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor2D;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

/// Batch statistics kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormCache {
    pub normalized: Tensor2D,
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
}

impl BatchNorm {
    pub fn new(features: usize) -> Self {
        BatchNorm {
            gamma: vec![1.0; features],
            beta: vec![0.0; features],
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.len()
    }

    fn check_width(&self, x: &Tensor2D) -> Result<()> {
        if x.cols() != self.features() {
            return Err(Error::shape(
                format!("{} features", self.features()),
                format!("{} columns", x.cols()),
            ));
        }
        Ok(())
    }

    /// Normalize with batch statistics and fold them into the running averages.
    /// The running variance uses the unbiased estimate.
    pub fn forward_train(&mut self, x: &Tensor2D) -> Result<(Tensor2D, BatchNormCache)> {
        self.check_width(x)?;
        let n = x.rows();
        if n < 2 {
            return Err(Error::BatchTooSmall(n));
        }
        let d = x.cols();
        let mut mean = vec![0.0; d];
        for row in x.data().chunks_exact(d) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut var = vec![0.0; d];
        for row in x.data().chunks_exact(d) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                let c = v - m;
                *s += c * c;
            }
        }
        for s in &mut var {
            *s /= n as f64;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();

        let mut normalized = x.clone();
        let mut out = x.clone();
        for (nrow, orow) in normalized
            .data_mut()
            .chunks_exact_mut(d)
            .zip(out.data_mut().chunks_exact_mut(d))
        {
            for j in 0..d {
                let xh = (nrow[j] - mean[j]) * inv_std[j];
                nrow[j] = xh;
                orow[j] = self.gamma[j] * xh + self.beta[j];
            }
        }

        let m = self.momentum;
        let unbias = n as f64 / (n as f64 - 1.0);
        for j in 0..d {
            self.running_mean[j] = (1.0 - m) * self.running_mean[j] + m * mean[j];
            self.running_var[j] = (1.0 - m) * self.running_var[j] + m * var[j] * unbias;
        }
        Ok((
            out,
            BatchNormCache {
                normalized,
                mean,
                inv_std,
            },
        ))
    }

    pub fn forward_infer(&self, x: &Tensor2D) -> Result<Tensor2D> {
        self.check_width(x)?;
        let d = x.cols();
        let scale: Vec<f64> = self
            .running_var
            .iter()
            .zip(&self.gamma)
            .map(|(v, g)| g / (v + self.eps).sqrt())
            .collect();
        let mut out = x.clone();
        for row in out.data_mut().chunks_exact_mut(d) {
            for j in 0..d {
                row[j] = (row[j] - self.running_mean[j]) * scale[j] + self.beta[j];
            }
        }
        Ok(out)
    }

    /// Returns `(d_input, d_gamma, d_beta)`.
    pub fn backward(
        &self,
        cache: &BatchNormCache,
        upstream: &Tensor2D,
    ) -> Result<(Tensor2D, Vec<f64>, Vec<f64>)> {
        let xh = &cache.normalized;
        if upstream.shape() != xh.shape() {
            return Err(Error::shape(
                format!("{:?}", xh.shape()),
                format!("{:?}", upstream.shape()),
            ));
        }
        let (n, d) = xh.shape();
        let mut dgamma = vec![0.0; d];
        let mut dbeta = vec![0.0; d];
        for (urow, xrow) in upstream
            .data()
            .chunks_exact(d)
            .zip(xh.data().chunks_exact(d))
        {
            for j in 0..d {
                dgamma[j] += urow[j] * xrow[j];
                dbeta[j] += urow[j];
            }
        }
        // dx = gamma·inv_std/n · (n·dy − Σdy − x̂·Σ(dy·x̂))
        let nf = n as f64;
        let mut dx = upstream.clone();
        for (drow, xrow) in dx
            .data_mut()
            .chunks_exact_mut(d)
            .zip(xh.data().chunks_exact(d))
        {
            for j in 0..d {
                let k = self.gamma[j] * cache.inv_std[j] / nf;
                drow[j] = k * (nf * drow[j] - dbeta[j] - xrow[j] * dgamma[j]);
            }
        }
        Ok((dx, dgamma, dbeta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch() -> Tensor2D {
        Tensor2D::from_rows(&[
            vec![0.3, -1.2, 4.0],
            vec![1.7, 0.4, 3.1],
            vec![-0.6, 2.2, 5.5],
            vec![0.9, -0.1, 2.4],
        ])
        .unwrap()
    }

    #[test]
    fn train_output_is_standardized() {
        let mut bn = BatchNorm::new(3);
        let (out, _) = bn.forward_train(&batch()).unwrap();
        for j in 0..3 {
            let col: Vec<f64> = (0..4).map(|i| out.get(i, j)).collect();
            let mean = col.iter().sum::<f64>() / 4.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn infer_with_unit_statistics_is_identity() {
        let bn = BatchNorm::new(3);
        let x = batch();
        let out = bn.forward_infer(&x).unwrap();
        let s = 1.0 / (1.0 + bn.eps).sqrt();
        for (o, v) in out.data().iter().zip(x.data()) {
            assert!((o - v * s).abs() < 1e-15);
            assert!((o - v).abs() < 1e-4);
        }
    }

    #[test]
    fn single_sample_batch_is_rejected() {
        let mut bn = BatchNorm::new(2);
        let x = Tensor2D::from_vec(1, 2, vec![1.0, 2.0]).unwrap();
        assert!(matches!(bn.forward_train(&x), Err(Error::BatchTooSmall(1))));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut bn = BatchNorm::new(3);
        bn.gamma = vec![1.3, 0.7, -0.4];
        bn.beta = vec![0.1, -0.2, 0.3];
        let x = batch();
        // Loss = Σ w ⊙ out with fixed pseudo-random weights.
        let w: Vec<f64> = (0..12).map(|i| ((i as f64) * 1.37).sin()).collect();
        let loss = |bn: &BatchNorm, x: &Tensor2D| {
            let mut b = bn.clone();
            let (out, _) = b.forward_train(x).unwrap();
            out.data().iter().zip(&w).map(|(o, w)| o * w).sum::<f64>()
        };
        let (_, cache) = bn.clone().forward_train(&x).unwrap();
        let up = Tensor2D::from_vec(4, 3, w.clone()).unwrap();
        let (dx, dg, db) = bn.backward(&cache, &up).unwrap();

        let h = 1e-6;
        for i in 0..12 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.data_mut()[i] += h;
            xm.data_mut()[i] -= h;
            let fd = (loss(&bn, &xp) - loss(&bn, &xm)) / (2.0 * h);
            assert!(
                (fd - dx.data()[i]).abs() < 1e-5,
                "dx[{i}]: {fd} vs {}",
                dx.data()[i]
            );
        }
        for j in 0..3 {
            let mut p = bn.clone();
            let mut m = bn.clone();
            p.gamma[j] += h;
            m.gamma[j] -= h;
            let fd = (loss(&p, &x) - loss(&m, &x)) / (2.0 * h);
            assert!((fd - dg[j]).abs() < 1e-5);
            let mut p = bn.clone();
            let mut m = bn.clone();
            p.beta[j] += h;
            m.beta[j] -= h;
            let fd = (loss(&p, &x) - loss(&m, &x)) / (2.0 * h);
            assert!((fd - db[j]).abs() < 1e-5);
        }
    }

    #[test]
    fn running_statistics_track_the_data() {
        let mut bn = BatchNorm::new(3);
        let x = batch();
        for _ in 0..200 {
            bn.forward_train(&x).unwrap();
        }
        let (train_out, _) = bn.clone().forward_train(&x).unwrap();
        let infer_out = bn.forward_infer(&x).unwrap();
        // Unbiased running variance vs biased batch variance differ by sqrt(4/3).
        for j in 0..3 {
            let mean = (0..4).map(|i| x.get(i, j)).sum::<f64>() / 4.0;
            assert!((bn.running_mean[j] - mean).abs() < 1e-6);
        }
        assert!(bn.running_var.iter().all(|v| *v >= 0.0));
        assert_eq!(train_out.shape(), infer_out.shape());
    }
}
