use std::path::Path;

use claimattn::data::DataError;
use claimattn::metrics::MetricError;
use claimattn::models::ModelError;
use claimattn::training::TrainError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments, unreadable files, malformed configs or data.
    #[error("{0}")]
    Input(String),
    /// Divergence or non-finite values during training or scoring.
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// A replayed run did not reproduce its recorded outputs.
    #[error("replay mismatch: {0}")]
    Mismatch(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numerical(_) | CliError::Mismatch(_) => 3,
        }
    }

    pub(crate) fn at(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Input(format!("{}: {e}", path.display()))
    }

    /// Prefixes the message with `context`, keeping the kind.
    pub(crate) fn context(self, context: &str) -> Self {
        match self {
            CliError::Input(m) => CliError::Input(format!("{context}: {m}")),
            CliError::Numerical(m) => CliError::Numerical(format!("{context}: {m}")),
            CliError::Mismatch(m) => CliError::Mismatch(format!("{context}: {m}")),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Tensor(t) => CliError::Numerical(t.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Diverged { .. } => CliError::Numerical(e.to_string()),
            TrainError::Model(m) => m.into(),
            TrainError::Data(d) => d.into(),
            TrainError::Config(m) => CliError::Input(format!("invalid train config: {m}")),
        }
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}
