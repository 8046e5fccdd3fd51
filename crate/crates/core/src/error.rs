use std::io;

use thiserror::Error;

/// Every failure the toolkit can report.
///
/// Context variants (`Layer`, `Channel`) wrap a root error; [`Error::kind`]
/// always reports the root.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("malformed file: {0}")]
    MalformedFile(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value at flat index {index}")]
    NonFiniteData { index: usize },

    #[error("unsupported dtype {0:?}")]
    UnsupportedDtype(String),

    #[error("degenerate class {class}: {reason}")]
    DegenerateClass { class: usize, reason: String },

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: i64, num_classes: usize },

    #[error("invalid cluster count {requested} for {num_points} points")]
    InvalidClusterCount { requested: usize, num_points: usize },

    #[error("linear algebra failure: {0}")]
    LinearAlgebraFailure(String),

    #[error("insufficient dimension: {0}")]
    InsufficientDimension(String),

    #[error("invalid watershed alpha {0}")]
    InvalidAlpha(f64),

    #[error("invalid pruning ratio {0}")]
    InvalidRatio(f64),

    #[error("missing report: {0}")]
    MissingReport(String),

    #[error("scheme mismatch: {0}")]
    SchemeMismatch(String),

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("layer {layer}: {source}")]
    Layer {
        layer: String,
        #[source]
        source: Box<Error>,
    },

    #[error("channel {channel}: {source}")]
    Channel {
        channel: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse grouping used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub fn in_layer(self, layer: impl Into<String>) -> Self {
        Error::Layer {
            layer: layer.into(),
            source: Box::new(self),
        }
    }

    pub fn in_channel(self, channel: usize) -> Self {
        Error::Channel {
            channel,
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Layer { source, .. } | Error::Channel { source, .. } => source.root(),
            other => other,
        }
    }

    /// Machine-readable name of the root error.
    pub fn kind(&self) -> &'static str {
        match self.root() {
            Error::Io(_) => "IoError",
            Error::MalformedFile(_) => "MalformedFile",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::NonFiniteData { .. } => "NonFiniteData",
            Error::UnsupportedDtype(_) => "UnsupportedDtype",
            Error::DegenerateClass { .. } => "DegenerateClass",
            Error::LabelOutOfRange { .. } => "LabelOutOfRange",
            Error::InvalidClusterCount { .. } => "InvalidClusterCount",
            Error::LinearAlgebraFailure(_) => "LinearAlgebraFailure",
            Error::InsufficientDimension(_) => "InsufficientDimension",
            Error::InvalidAlpha(_) => "InvalidAlpha",
            Error::InvalidRatio(_) => "InvalidRatio",
            Error::MissingReport(_) => "MissingReport",
            Error::SchemeMismatch(_) => "SchemeMismatch",
            Error::InvalidSpec(_) => "InvalidSpec",
            Error::InvalidParameter(_) => "InvalidParameter",
            Error::Json(_) => "MalformedFile",
            Error::Layer { .. } | Error::Channel { .. } => unreachable!("root() strips context"),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self.root() {
            Error::InvalidClusterCount { .. }
            | Error::InvalidAlpha(_)
            | Error::InvalidRatio(_)
            | Error::InvalidParameter(_) => ErrorClass::Usage,
            Error::LinearAlgebraFailure(_) => ErrorClass::Numerical,
            _ => ErrorClass::Data,
        }
    }

    /// Channel index attached by the innermost `Channel` wrapper, if any.
    pub fn channel(&self) -> Option<usize> {
        match self {
            Error::Channel { channel, .. } => Some(*channel),
            Error::Layer { source, .. } => source.channel(),
            _ => None,
        }
    }

    /// Layer name attached by the outermost `Layer` wrapper, if any.
    pub fn layer(&self) -> Option<&str> {
        match self {
            Error::Layer { layer, .. } => Some(layer),
            Error::Channel { source, .. } => source.layer(),
            _ => None,
        }
    }
}
