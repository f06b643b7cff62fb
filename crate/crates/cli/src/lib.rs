//! Campaign orchestration for the QCM-QAM study: configuration, sweeps over
//! launch power and distance, PSD analysis, reach, and CSV outputs with a
//! resumable run manifest.

pub mod analysis;
pub mod config;
pub mod error;
pub mod manifest;
pub mod psd;
pub mod reach;
pub mod scatter;
pub mod sweep;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
pub use manifest::RunManifest;
pub use psd::run_psd;
pub use reach::run_reach;
pub use scatter::{dump_constellation, run_scatter, write_scatter};
pub use sweep::{run_sweep, RunOptions};
