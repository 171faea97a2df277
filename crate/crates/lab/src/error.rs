use std::path::PathBuf;

use pdrfe_core::trainer::TrainError;

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    /// Malformed input file; `line` is 1-based.
    #[error("{}:{line}: {msg}", path.display())]
    Format { path: PathBuf, line: usize, msg: String },

    /// Unusable configuration or plan.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] pdrfe_core::Error),

    #[error(transparent)]
    Train(#[from] TrainError),

    #[error("every cell failed; first error: {0}")]
    AllCellsFailed(String),

    #[error("test CE below the Bayes CE in {0} cell(s)")]
    BayesViolation(usize),
}

impl LabError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LabError::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        LabError::Format { path: path.into(), line, msg: msg.into() }
    }

    /// True for errors caused by how the tool was invoked rather than by a run.
    pub fn is_usage(&self) -> bool {
        matches!(self, LabError::Config(_))
    }
}

pub type Result<T, E = LabError> = std::result::Result<T, E>;
