use thiserror::Error;

/// Errors raised while loading configurations or running experiments.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cannot parse configuration: {0}")]
    ConfigSyntax(#[from] toml::de::Error),

    #[error("cannot serialize configuration: {0}")]
    ConfigWrite(#[from] toml::ser::Error),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Core(#[from] qcm_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("{failed} of {total} runs failed; see the manifest for details")]
    RunsFailed { failed: usize, total: usize },
}

pub type Result<T> = std::result::Result<T, CliError>;
