use crate::error::{Error, Result};
use crate::tensor::Tensor2D;

fn check_labels(logits: &Tensor2D, labels: &[usize]) -> Result<()> {
    if labels.len() != logits.rows() {
        return Err(Error::shape(
            format!("{} labels", logits.rows()),
            format!("{}", labels.len()),
        ));
    }
    let classes = logits.cols();
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    Ok(())
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &Tensor2D, labels: &[usize]) -> Result<(f64, Tensor2D)> {
    check_labels(logits, labels)?;
    let n = logits.rows();
    if n == 0 {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let k = logits.cols();
    let mut grad = logits.clone();
    let mut loss = 0.0;
    for (row, &label) in grad.data_mut().chunks_exact_mut(k).zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let target = row[label];
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        loss += max + sum.ln() - target;
        for v in row.iter_mut() {
            *v /= sum * n as f64;
        }
        row[label] -= 1.0 / n as f64;
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    Ok((loss / n as f64, grad))
}

/// Index of the largest logit per row; ties go to the lowest index.
pub fn argmax_rows(logits: &Tensor2D) -> Vec<usize> {
    let k = logits.cols();
    if k == 0 {
        return vec![0; logits.rows()];
    }
    logits
        .data()
        .chunks_exact(k)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

pub fn accuracy(predicted: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len() as f64
}
