//! Training settings resolved from flags, an optional `key = value` file and
//! defaults, in that order of precedence.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use deu::data::SyntheticKind;
use deu::nn::ActivationKind;
use deu::optim::OptimizerConfig;
use deu::train::TrainConfig;
use deu::KernelConfig;

use crate::error::{CliError, CliResult};

/// Every key accepted in a config file (flags use the kebab-case spelling).
pub const KEYS: &[&str] = &[
    "dataset",
    "data_dir",
    "train_csv",
    "test_csv",
    "label_column",
    "n_train",
    "n_test",
    "noise",
    "data_seed",
    "arch",
    "activation",
    "epochs",
    "batch_size",
    "lr_weights",
    "lr_deu_scale",
    "epsilon",
    "exp_arg_clamp",
    "output_clamp",
    "clip_deu_grad_norm",
    "batch_norm",
    "seed",
    "checkpoint_out",
    "metrics_out",
    "timing_out",
];

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    /// Directory holding `train-*` and `t10k-*` IDX files, raw or gzip.
    Idx { dir: PathBuf },
    Csv {
        train: PathBuf,
        test: PathBuf,
        label_column: String,
    },
    Synthetic {
        kind: SyntheticKind,
        n_train: usize,
        n_test: usize,
        noise: f64,
        data_seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub dataset: DatasetSpec,
    pub arch: Vec<usize>,
    pub activation: ActivationKind,
    pub train: TrainConfig,
    pub kernel: KernelConfig,
    pub batch_norm: bool,
    pub checkpoint_out: Option<PathBuf>,
    pub metrics_out: Option<PathBuf>,
    pub timing_out: Option<PathBuf>,
}

/// Raw string values keyed by snake_case name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig(pub BTreeMap<String, String>);

fn normalize_key(k: &str) -> String {
    k.trim().replace('-', "_").to_ascii_lowercase()
}

impl RawConfig {
    pub fn parse_file(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse_str(&text)
            .map_err(|e| CliError::new(e.code, format!("{}: {}", path.display(), e.message)))
    }

    pub fn parse_str(text: &str) -> CliResult<Self> {
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::new(
                    "invalid_config",
                    format!("line {}: expected `key = value`", i + 1),
                )
            })?;
            let key = normalize_key(k);
            if !KEYS.contains(&key.as_str()) {
                return Err(CliError::new(
                    "invalid_config",
                    format!("line {}: unknown key {key:?}", i + 1),
                ));
            }
            let v = v.trim();
            let v = v
                .strip_prefix('"')
                .and_then(|s| s.strip_suffix('"'))
                .unwrap_or(v);
            if map.insert(key.clone(), v.to_string()).is_some() {
                return Err(CliError::new(
                    "invalid_config",
                    format!("line {}: duplicate key {key:?}", i + 1),
                ));
            }
        }
        Ok(RawConfig(map))
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.0.insert(normalize_key(key), value.into());
    }

    /// Values in `over` win.
    pub fn overlay(mut self, over: &RawConfig) -> Self {
        for (k, v) in &over.0 {
            self.0.insert(k.clone(), v.clone());
        }
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    fn typed<T: FromStr>(&self, key: &str, default: T) -> CliResult<T> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| CliError::new("invalid_config", format!("{key}: cannot parse {v:?}"))),
        }
    }

    fn required(&self, key: &str) -> CliResult<&str> {
        self.get(key).ok_or_else(|| {
            CliError::new("invalid_config", format!("missing required setting {key}"))
        })
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(PathBuf::from)
    }

    fn flag(&self, key: &str, default: bool) -> CliResult<bool> {
        match self.get(key).map(str::to_ascii_lowercase).as_deref() {
            None => Ok(default),
            Some("true" | "on" | "yes" | "1") => Ok(true),
            Some("false" | "off" | "no" | "0") => Ok(false),
            Some(v) => Err(CliError::new(
                "invalid_config",
                format!("{key}: expected a boolean, got {v:?}"),
            )),
        }
    }

    pub fn dataset(&self) -> CliResult<DatasetSpec> {
        let kind = self.required("dataset")?.to_ascii_lowercase();
        match kind.as_str() {
            "idx" => Ok(DatasetSpec::Idx {
                dir: PathBuf::from(self.required("data_dir")?),
            }),
            "csv" => Ok(DatasetSpec::Csv {
                train: PathBuf::from(self.required("train_csv")?),
                test: PathBuf::from(self.required("test_csv")?),
                label_column: self.get("label_column").unwrap_or("label").to_string(),
            }),
            other => {
                let kind: SyntheticKind = other.parse().map_err(|_| {
                    CliError::new(
                        "invalid_config",
                        format!(
                            "dataset: expected idx, csv, moons, circles or spirals, got {other:?}"
                        ),
                    )
                })?;
                Ok(DatasetSpec::Synthetic {
                    kind,
                    n_train: self.typed("n_train", 1000)?,
                    n_test: self.typed("n_test", 1000)?,
                    noise: self.typed("noise", 0.1)?,
                    data_seed: self.typed("data_seed", 0)?,
                })
            }
        }
    }

    pub fn settings(&self) -> CliResult<Settings> {
        let d = TrainConfig::default();
        let o = OptimizerConfig::default();
        let k = KernelConfig::default();
        let clip = match self
            .get("clip_deu_grad_norm")
            .map(str::to_ascii_lowercase)
            .as_deref()
        {
            None => o.clip_deu_grad_norm,
            Some("none" | "off") => None,
            Some(_) => Some(self.typed("clip_deu_grad_norm", 0.0)?),
        };
        let optimizer = OptimizerConfig {
            lr_weights: self.typed("lr_weights", o.lr_weights)?,
            lr_deu_scale: self.typed("lr_deu_scale", o.lr_deu_scale)?,
            clip_deu_grad_norm: clip,
            ..o
        };
        optimizer.validate()?;
        let kernel = KernelConfig {
            epsilon: self.typed("epsilon", k.epsilon)?,
            exp_arg_clamp: self.typed("exp_arg_clamp", k.exp_arg_clamp)?,
            output_clamp: self.typed("output_clamp", k.output_clamp)?,
        };
        kernel.validate()?;
        let activation: ActivationKind = self.typed("activation", ActivationKind::Deu)?;
        Ok(Settings {
            dataset: self.dataset()?,
            arch: parse_arch(self.required("arch")?)?,
            activation,
            train: TrainConfig {
                epochs: self.typed("epochs", d.epochs)?,
                batch_size: self.typed("batch_size", d.batch_size)?,
                seed: self.typed("seed", d.seed)?,
                optimizer,
            },
            kernel,
            batch_norm: self.flag("batch_norm", true)?,
            checkpoint_out: self.path("checkpoint_out"),
            metrics_out: self.path("metrics_out"),
            timing_out: self.path("timing_out"),
        })
    }
}

/// `"784-256-10"` → `[784, 256, 10]`.
pub fn parse_arch(s: &str) -> CliResult<Vec<usize>> {
    let widths = s
        .split('-')
        .map(|p| p.trim().parse::<usize>().ok().filter(|&w| w > 0))
        .collect::<Option<Vec<_>>>();
    match widths {
        Some(w) if w.len() >= 2 => Ok(w),
        _ => Err(CliError::new(
            "invalid_widths",
            format!("arch must be at least two positive widths joined by '-', got {s:?}"),
        )),
    }
}
