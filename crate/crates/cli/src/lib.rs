//! Command-line front end for the `afb` binary: dataset generation,
//! segmentation runs, evaluation, bank benchmarks, ablations and scorer
//! training.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 internal failure.

pub mod app;
pub mod commands;
pub mod config;
pub mod error;

pub use app::{main_with, Cli};
pub use error::{CliError, CliResult};
