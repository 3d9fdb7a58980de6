//! Library behind the `aer` binary: config files, run directories, sweeps and
//! SVG plots.

pub mod config;
pub mod error;
pub mod plot;
pub mod runs;
pub mod sweep;

pub use error::{CliError, Result};
