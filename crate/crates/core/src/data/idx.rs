use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use super::{Dataset, Normalization};
use crate::error::{Error, Result};
use crate::tensor::Tensor2D;

const IMAGE_MAGIC: u32 = 2051;
const LABEL_MAGIC: u32 = 2049;

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

/// Validate the header and return `(dims, payload)`.
fn parse<'a>(
    path: &Path,
    bytes: &'a [u8],
    magic: u32,
    ndims: usize,
) -> Result<(Vec<usize>, &'a [u8])> {
    let header = 4 + 4 * ndims;
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: header,
            found: bytes.len(),
        });
    }
    let found = be_u32(bytes, 0);
    if found != magic {
        return Err(Error::WrongMagic {
            path: path.to_path_buf(),
            expected: magic,
            found,
        });
    }
    if bytes.len() < header {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: header,
            found: bytes.len(),
        });
    }
    let dims: Vec<usize> = (0..ndims)
        .map(|i| be_u32(bytes, 4 + 4 * i) as usize)
        .collect();
    let len: usize = dims.iter().product();
    let payload = &bytes[header..];
    if payload.len() < len {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: len,
            found: payload.len(),
        });
    }
    Ok((dims, &payload[..len]))
}

/// Load an IDX image/label pair (raw or gzip). Pixels are scaled to `[0, 1]`.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let image_bytes = read_maybe_gz(ip)?;
    let label_bytes = read_maybe_gz(lp)?;
    let (dims, pixels) = parse(ip, &image_bytes, IMAGE_MAGIC, 3)?;
    let (ldims, raw_labels) = parse(lp, &label_bytes, LABEL_MAGIC, 1)?;
    let (n, d) = (dims[0], dims[1] * dims[2]);
    if ldims[0] != n {
        return Err(Error::CountMismatch {
            images: n,
            labels: ldims[0],
        });
    }
    let features = Tensor2D::from_vec(n, d, pixels.iter().map(|&p| p as f64 / 255.0).collect())?;
    let labels: Vec<usize> = raw_labels.iter().map(|&l| l as usize).collect();
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let normalization = Normalization {
        shift: vec![0.0; d],
        scale: vec![255.0; d],
    };
    Dataset::new(features, labels, num_classes, normalization)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdxSplit {
    pub train: Dataset,
    pub test: Dataset,
}

fn find(dir: &Path, stem: &str) -> Result<PathBuf> {
    for name in [stem.to_string(), format!("{stem}.gz")] {
        let p = dir.join(name);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Error::io(
        dir.join(stem),
        std::io::Error::new(
            std::io::ErrorKind::NotFound,
            "IDX file not found (raw or .gz)",
        ),
    ))
}

/// Load the standard `train-*` / `t10k-*` file set from a directory.
pub fn load_idx_dir(dir: impl AsRef<Path>) -> Result<IdxSplit> {
    let dir = dir.as_ref();
    let train = load_idx(
        find(dir, "train-images-idx3-ubyte")?,
        find(dir, "train-labels-idx1-ubyte")?,
    )?;
    let test = load_idx(
        find(dir, "t10k-images-idx3-ubyte")?,
        find(dir, "t10k-labels-idx1-ubyte")?,
    )?;
    let classes = train.num_classes.max(test.num_classes);
    let fix = |mut d: Dataset| {
        d.num_classes = classes;
        d
    };
    Ok(IdxSplit {
        train: fix(train),
        test: fix(test),
    })
}
