//! Configuration, checkpoints, manifests, tuning and the experiment pipeline
//! behind the `tsgan` binary.

pub mod checkpoint;
pub mod config;
pub mod experiment;
pub mod manifest;
pub mod run;
pub mod store;
pub mod tune;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    ConfigFile(#[from] config::ConfigError),
    #[error(transparent)]
    Checkpoint(#[from] checkpoint::CheckpointError),
    #[error(transparent)]
    Data(#[from] tsgan_core::data::DataError),
    #[error(transparent)]
    Gan(#[from] tsgan_core::gan::GanError),
    #[error(transparent)]
    Forecast(#[from] tsgan_core::forecast::ForecastError),
    #[error(transparent)]
    Tensor(#[from] tsgan_core::tensor::TensorError),
    #[error(transparent)]
    Metric(#[from] tsgan_core::metrics::MetricError),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl HarnessError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// 2 for bad flags or configuration, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) | HarnessError::Config(_) | HarnessError::ConfigFile(_) => 2,
            _ => 1,
        }
    }
}
