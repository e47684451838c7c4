use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition of an operation was not met by its arguments.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("division by zero in {what}: {detail}")]
    DivisionDomain { what: &'static str, detail: String },

    #[error("observed sequence is inconsistent with every example in the dataset")]
    NoSupport,

    #[error("unknown label {label} (dataset has {classes} classes)")]
    UnknownLabel { label: usize, classes: usize },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("format mismatch: {0}")]
    Format(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
