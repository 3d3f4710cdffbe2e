use thiserror::Error;

/// Coarse error classes, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Resource,
    Numeric,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("degenerate spectrum: {0}")]
    DegenerateSpectrum(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("construction error: {0}")]
    Construction(String),

    #[error("resource limit exceeded: {what} needs {required} but the cap is {cap}")]
    Resource {
        what: &'static str,
        required: u128,
        cap: u64,
    },

    #[error("numeric error: {0}")]
    Numeric(String),

    /// Failure while evaluating one `(N, M)` point of a sweep.
    #[error("at N={n}, M={m}: {source}")]
    AtPoint {
        n: u64,
        m: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Resource { .. } => ErrorKind::Resource,
            Error::Numeric(_) => ErrorKind::Numeric,
            Error::AtPoint { source, .. } => source.kind(),
            _ => ErrorKind::Validation,
        }
    }

    /// Stable machine-readable tag for the variant.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Parse(_) => "parse",
            Error::Validation(_) => "validation",
            Error::DegenerateSpectrum(_) => "degenerate_spectrum",
            Error::Domain(_) => "domain",
            Error::Construction(_) => "construction",
            Error::Resource { .. } => "resource",
            Error::Numeric(_) => "numeric",
            Error::AtPoint { source, .. } => source.code(),
        }
    }

    pub fn at_point(self, n: u64, m: u64) -> Self {
        Error::AtPoint {
            n,
            m,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
