//! Library side of the `deu` command: settings, checkpoints and the
//! subcommand implementations.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;

pub use checkpoint::Checkpoint;
pub use config::{DatasetSpec, RawConfig, Settings};
pub use error::{CliError, CliResult};
