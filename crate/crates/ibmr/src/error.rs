use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch on {axis}: expected {expected}, got {actual}")]
    DimensionMismatch {
        axis: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("unknown label `{label}` in dataset {dataset}")]
    UnknownLabel { dataset: usize, label: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid collection:\n{0}")]
    InvalidCollection(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("coverage violation: {0}")]
    Coverage(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("unrecognized model format: {0}")]
    ModelFormat(String),

    #[error("every grid point failed to fit")]
    PathFailed,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
