use std::collections::HashMap;
use std::path::Path;

use super::{Dataset, Normalization};
use crate::error::{Error, Result};
use crate::tensor::Tensor2D;

struct Raw {
    rows: Vec<Vec<f64>>,
    labels: Vec<String>,
}

fn read(path: &Path, label_column: &str) -> Result<Raw> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Csv(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Csv(format!("{}: {e}", path.display())))?
        .clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .or_else(|| {
            label_column
                .parse::<usize>()
                .ok()
                .filter(|&i| i < headers.len())
        })
        .ok_or_else(|| {
            Error::Csv(format!(
                "{}: no label column {label_column:?}",
                path.display()
            ))
        })?;
    let width = headers.len();

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::Csv(format!("{}: {e}", path.display())))?;
        if record.len() != width {
            return Err(Error::Csv(format!(
                "{}:{line}: ragged row with {} fields, header has {width}",
                path.display(),
                record.len()
            )));
        }
        let mut row = Vec::with_capacity(width - 1);
        for (j, cell) in record.iter().enumerate() {
            if j == label_idx {
                labels.push(cell.to_string());
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| {
                Error::Csv(format!(
                    "{}:{line}: non-numeric value {cell:?} in column {:?}",
                    path.display(),
                    &headers[j]
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Csv(format!(
                    "{}:{line}: non-finite value in column {:?}",
                    path.display(),
                    &headers[j]
                )));
            }
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Csv(format!("{}: no data rows", path.display())));
    }
    Ok(Raw { rows, labels })
}

fn to_tensor(rows: Vec<Vec<f64>>) -> Result<Tensor2D> {
    let (n, d) = (rows.len(), rows[0].len());
    Tensor2D::from_vec(n, d, rows.into_iter().flatten().collect())
}

/// Load a labeled CSV with a header row. Features are standardized per
/// column; labels become dense indices in order of first appearance.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let raw = read(path, label_column)?;

    let mut names: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let labels: Vec<usize> = raw
        .labels
        .iter()
        .map(|l| {
            *index.entry(l.clone()).or_insert_with(|| {
                names.push(l.clone());
                names.len() - 1
            })
        })
        .collect();
    if names.len() < 2 {
        log::warn!("{}: only one class present", path.display());
    }

    let mut features = to_tensor(raw.rows)?;
    let (n, d) = features.shape();
    let mut shift = vec![0.0; d];
    let mut scale = vec![0.0; d];
    for row in features.data().chunks_exact(d) {
        for (s, v) in shift.iter_mut().zip(row) {
            *s += v;
        }
    }
    shift.iter_mut().for_each(|s| *s /= n as f64);
    for row in features.data().chunks_exact(d) {
        for ((k, v), s) in scale.iter_mut().zip(row).zip(&shift) {
            *k += (v - s) * (v - s);
        }
    }
    for k in &mut scale {
        let sd = (*k / n as f64).sqrt();
        *k = if sd > 0.0 { sd } else { 1.0 };
    }
    let normalization = Normalization { shift, scale };
    normalization.apply(&mut features);

    let mut ds = Dataset::new(features, labels, names.len(), normalization)?;
    ds.class_names = Some(names);
    Ok(ds)
}

/// Load a CSV using the normalization and label mapping of `reference`
/// (typically the training split).
pub fn load_csv_like(
    path: impl AsRef<Path>,
    label_column: &str,
    reference: &Dataset,
) -> Result<Dataset> {
    let path = path.as_ref();
    let raw = read(path, label_column)?;
    let names = reference
        .class_names
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("reference dataset has no label names".into()))?;
    let labels = raw
        .labels
        .iter()
        .map(|l| {
            names.iter().position(|n| n == l).ok_or_else(|| {
                Error::Csv(format!(
                    "{}: label {l:?} not present in training data",
                    path.display()
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut features = to_tensor(raw.rows)?;
    if features.cols() != reference.num_features() {
        return Err(Error::shape(
            format!("{} feature columns", reference.num_features()),
            format!("{}", features.cols()),
        ));
    }
    reference.normalization.apply(&mut features);
    let mut ds = Dataset::new(
        features,
        labels,
        reference.num_classes,
        reference.normalization.clone(),
    )?;
    ds.class_names = Some(names.clone());
    Ok(ds)
}
