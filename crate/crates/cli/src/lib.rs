//! Experiment driver for the `docsig` signatures: configuration, synthetic
//! corpora, extraction to feature stores, evaluation, sweeps and patent
//! ranking. The `docsig` binary is a thin command-line layer over these
//! functions.

pub mod config;
pub mod decode;
pub mod error;
pub mod evaluate;
pub mod extract;
pub mod patents;
pub mod report;
pub mod sweep;
pub mod synth;
pub mod train;

pub use config::{ExperimentConfig, Signature};
pub use error::{CliError, Result};
