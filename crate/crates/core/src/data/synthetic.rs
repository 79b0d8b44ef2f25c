use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Normalization};
use crate::error::{Error, Result};
use crate::tensor::Tensor2D;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticKind {
    Moons,
    Circles,
    Spirals,
}

impl SyntheticKind {
    pub fn name(self) -> &'static str {
        match self {
            SyntheticKind::Moons => "moons",
            SyntheticKind::Circles => "circles",
            SyntheticKind::Spirals => "spirals",
        }
    }
}

impl fmt::Display for SyntheticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "moons" => Ok(SyntheticKind::Moons),
            "circles" => Ok(SyntheticKind::Circles),
            "spirals" => Ok(SyntheticKind::Spirals),
            other => Err(Error::UnknownKind {
                what: "synthetic dataset",
                value: other.to_string(),
            }),
        }
    }
}

/// Point `i` of `m` on the clean curve of class `class`.
fn point(kind: SyntheticKind, class: usize, i: usize, m: usize) -> (f64, f64) {
    match kind {
        SyntheticKind::Moons => {
            let th = PI * i as f64 / (m.max(2) - 1) as f64;
            if class == 0 {
                (th.cos(), th.sin())
            } else {
                (1.0 - th.cos(), 0.5 - th.sin())
            }
        }
        SyntheticKind::Circles => {
            let th = 2.0 * PI * i as f64 / m as f64;
            let r = if class == 0 { 1.0 } else { 0.5 };
            (r * th.cos(), r * th.sin())
        }
        SyntheticKind::Spirals => {
            // 1.5 turns, radius growing linearly; class 1 is rotated by π.
            let s = (i as f64 + 0.5) / m as f64;
            let th = 3.0 * PI * s + PI * class as f64;
            (s * th.cos(), s * th.sin())
        }
    }
}

/// Two-class 2-D dataset; classes differ in size by at most one.
pub fn make_synthetic(kind: SyntheticKind, n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n < 4 {
        return Err(Error::InvalidInput(format!(
            "synthetic dataset needs n >= 4, got {n}"
        )));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "noise",
            value: noise,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes = [n - n / 2, n / 2];
    let mut samples: Vec<(f64, f64, usize)> = Vec::with_capacity(n);
    for (class, &m) in sizes.iter().enumerate() {
        for i in 0..m {
            let (x, y) = point(kind, class, i, m);
            let ex: f64 = StandardNormal.sample(&mut rng);
            let ey: f64 = StandardNormal.sample(&mut rng);
            samples.push((x + noise * ex, y + noise * ey, class));
        }
    }
    samples.shuffle(&mut rng);
    let features = Tensor2D::from_vec(n, 2, samples.iter().flat_map(|s| [s.0, s.1]).collect())?;
    let labels = samples.iter().map(|s| s.2).collect();
    Dataset::new(features, labels, 2, Normalization::identity(2))
}
