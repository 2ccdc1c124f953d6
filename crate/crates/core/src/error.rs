use std::path::PathBuf;

/// Errors raised across the detection pipeline.
#[derive(Debug, thiserror::Error)]
pub enum DacrError {
    #[error("format error: {0}")]
    Format(String),

    #[error("data integrity error: {0}")]
    DataIntegrity(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("training diverged at iteration {iteration}: {detail}")]
    TrainingDiverged { iteration: usize, detail: String },

    #[error("state error: {0}")]
    State(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, DacrError>;

impl DacrError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DacrError::Io {
            path: path.into(),
            source,
        }
    }
}
