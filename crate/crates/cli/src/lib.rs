//! Pipeline stages behind the `marl` command.

pub mod config;
pub mod error;
pub mod lock;
pub mod logging;
pub mod stages;

pub use config::RunConfig;
pub use error::{CliError, CliResult};
pub use stages::{Context, Stage};
