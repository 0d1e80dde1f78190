use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("support set is empty")]
    EmptySupport,

    #[error("list of length {0} is too short for this loss (need at least 2)")]
    DegenerateList(usize),

    #[error("value out of domain: {0}")]
    Domain(String),

    #[error("meta-dataset has no tasks")]
    EmptyMetaDataset,

    #[error("task '{task}': {message}")]
    Schema { task: String, message: String },

    #[error("scorer index {index} out of range for ensemble of {size}")]
    MemberIndex { index: usize, size: usize },

    #[error("candidate pool exhausted")]
    ExhaustedPool,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("histories are not aligned: {0}")]
    Alignment(String),

    #[error("degenerate range: y_max ({y_max}) must exceed y_min ({y_min})")]
    DegenerateRange { y_min: f64, y_max: f64 },

    #[error("malformed model file: {0}")]
    Format(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Shape {
            context,
            expected,
            got,
        })
    }
}

pub(crate) fn check_finite(context: &'static str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(context))
    }
}
