use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter {name}: {value}")]
    InvalidParameter { name: &'static str, value: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid kernel config: {0}")]
    InvalidConfig(String),

    /// Coefficients were handed to the kernel without being resolved first.
    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid IVP spec: {0}")]
    InvalidSpec(String),

    #[error("integration diverged at t = {t}")]
    Divergence { t: f64 },

    #[error("empty evaluation grid")]
    EmptyGrid,

    #[error("batch normalization needs at least 2 samples in train mode, got {0}")]
    BatchTooSmall(usize),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("stale forward cache: {0}")]
    StaleCache(String),

    #[error("non-finite gradient for {0}")]
    NonFiniteGradient(String),

    #[error("invalid layer widths: {0}")]
    InvalidWidths(String),

    #[error("{path}: wrong IDX magic {found} (expected {expected})")]
    WrongMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("{path}: truncated IDX payload ({expected} bytes expected, {found} available)")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("csv: {0}")]
    Csv(String),

    #[error("unknown {what}: {value}")]
    UnknownKind { what: &'static str, value: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            expected: expected.into(),
            got: got.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable identifier, used for machine-readable error reports.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidParameter { .. } => "invalid_parameter",
            Error::InvalidInput(_) => "invalid_input",
            Error::InvalidConfig(_) => "invalid_config",
            Error::ContractViolation(_) => "contract_violation",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::NonFinite(_) => "non_finite",
            Error::InvalidSpec(_) => "invalid_spec",
            Error::Divergence { .. } => "divergence",
            Error::EmptyGrid => "empty_grid",
            Error::BatchTooSmall(_) => "batch_too_small",
            Error::LabelOutOfRange { .. } => "label_out_of_range",
            Error::StaleCache(_) => "stale_cache",
            Error::NonFiniteGradient(_) => "non_finite_gradient",
            Error::InvalidWidths(_) => "invalid_widths",
            Error::WrongMagic { .. } => "wrong_magic",
            Error::Truncated { .. } => "truncated",
            Error::CountMismatch { .. } => "count_mismatch",
            Error::Csv(_) => "csv",
            Error::UnknownKind { .. } => "unknown_kind",
            Error::Io { .. } => "io",
        }
    }
}
