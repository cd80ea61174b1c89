use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("tape is empty")]
    EmptyTape,
    #[error("gradient reversal needs lambda > 0, got {0}")]
    NonPositiveLambda(f64),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("no gradient for parameter `{0}`")]
    MissingGrad(String),
    #[error("optimizer state for `{0}` does not match the parameter shape")]
    StaleState(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("unknown variable {0}")]
    UnknownVar(usize),
}

pub type Result<T, E = AutodiffError> = std::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        detail: detail.into(),
    }
}
