use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised anywhere in the engine.
///
/// `kind()` collapses them into the coarse classes the command line maps to
/// exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("fit error: {0}")]
    Fit(String),
    #[error("degenerate channel {channel}: lower and upper bounds coincide at {value}")]
    DegenerateChannel { channel: usize, value: f64 },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("latent tag mismatch: codec expects {expected}, latent carries {found}")]
    Tag { expected: String, found: String },
    #[error("non-finite value in {context}: {detail}")]
    Numeric { context: String, detail: String },
    #[error("pairing error: {0}")]
    Pairing(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("chip {id}: {source}")]
    Chip {
        id: String,
        #[source]
        source: Box<Error>,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Numeric { .. } => ErrorKind::Numeric,
            Error::Chip { source, .. } => source.kind(),
            Error::Config(_) | Error::Domain(_) => ErrorKind::Usage,
            _ => ErrorKind::Data,
        }
    }

    /// Short machine-readable class name.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Shape(_) => "shape",
            Error::Fit(_) => "fit",
            Error::DegenerateChannel { .. } => "degenerate",
            Error::Parse(_) => "parse",
            Error::Tag { .. } => "tag",
            Error::Numeric { .. } => "numeric",
            Error::Pairing(_) => "pairing",
            Error::Config(_) => "config",
            Error::Chip { source, .. } => source.class(),
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn numeric(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numeric {
            context: context.into(),
            detail: detail.into(),
        }
    }

    pub fn with_chip(self, id: impl Into<String>) -> Self {
        Error::Chip {
            id: id.into(),
            source: Box::new(self),
        }
    }
}
