//! Library side of the `scvae` command: configuration, dataset resolution and
//! the experiment pipeline.

pub mod config;
pub mod datasets;
pub mod error;
pub mod pipeline;

pub use config::{GridConfig, ModelChoice, RunConfig};
pub use error::{CliError, CliResult, ExitKind};
