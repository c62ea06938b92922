use std::fmt;
use std::path::PathBuf;

use crate::tensor::Shape;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors emitted anywhere in the engine.
#[derive(Debug)]
pub enum Error {
    /// Operand shapes are incompatible for the requested op.
    ShapeMismatch { op: &'static str, detail: String },
    /// An argument violated an op precondition (even kernel, bad dilation, ...).
    InvalidArgument { op: &'static str, detail: String },
    /// A NaN or infinity was detected where finite values are required.
    NonFinite { context: String },
    /// The tape already ran backward; record a new forward pass first.
    TapeConsumed,
    /// backward() was called on a tensor that is not a scalar.
    NonScalarLoss { shape: Shape },
    /// Gradient-check target produced different values on repeated evaluation.
    NonDeterministic { detail: String },
    /// An optimizer step found a parameter without a populated gradient.
    MissingGradient { name: String },
    /// Model or training configuration is invalid.
    Config { detail: String },
    /// Data file is missing, malformed, or inconsistent.
    Data { path: PathBuf, detail: String },
    /// Checkpoint directory is missing tensors, version-mismatched, or corrupt.
    Checkpoint { detail: String },
    Io { path: PathBuf, source: std::io::Error },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, detail } => write!(f, "{op}: shape mismatch: {detail}"),
            Error::InvalidArgument { op, detail } => write!(f, "{op}: invalid argument: {detail}"),
            Error::NonFinite { context } => write!(f, "non-finite value in {context}"),
            Error::TapeConsumed => write!(f, "tape already consumed by backward; record a new forward pass"),
            Error::NonScalarLoss { shape } => write!(f, "backward requires a scalar loss, got shape {shape}"),
            Error::NonDeterministic { detail } => write!(f, "non-deterministic function under gradient check: {detail}"),
            Error::MissingGradient { name } => write!(f, "parameter '{name}' has no gradient"),
            Error::Config { detail } => write!(f, "invalid configuration: {detail}"),
            Error::Data { path, detail } => write!(f, "data error in '{}': {detail}", path.display()),
            Error::Checkpoint { detail } => write!(f, "checkpoint error: {detail}"),
            Error::Io { path, source } => write!(f, "io error on '{}': {source}", path.display()),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch { op, detail: detail.into() }
    }

    pub fn invalid(op: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidArgument { op, detail: detail.into() }
    }

    pub fn config(detail: impl Into<String>) -> Self {
        Error::Config { detail: detail.into() }
    }

    pub fn data(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Data { path: path.into(), detail: detail.into() }
    }

    pub fn checkpoint(detail: impl Into<String>) -> Self {
        Error::Checkpoint { detail: detail.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
