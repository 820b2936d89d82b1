//! File formats, configuration and the command-line front end for
//! Kruskal convolutional sparse coding.
//!
//! The numerical work lives in `krusco-core`; this crate reads and writes
//! NPY tensors, JSON configuration and manifests, the per-block trace CSV
//! and the metrics report.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod metrics;
pub mod model_io;
pub mod npy;
pub mod trace;

pub use error::{CliError, CliResult};
