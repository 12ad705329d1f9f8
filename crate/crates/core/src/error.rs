use thiserror::Error;

/// Errors produced by the sampling library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("cannot standardize coordinate {coordinate}: zero range")]
    Standardization { coordinate: usize },

    #[error("partition has too many cells (exceeds 2^63)")]
    PartitionOverflow,

    #[error("quadrature failure: total mass {mass} deviates from 1")]
    Quadrature { mass: f64 },

    #[error("degenerate proposal{}", match .iteration { Some(i) => format!(" at iteration {i}"), None => String::new() })]
    DegenerateProposal { iteration: Option<usize> },

    #[error("degenerate chains: {0}")]
    DegenerateChains(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for failures caused by numerical degeneracy rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateProposal { .. } | Error::DegenerateChains(_) | Error::Quadrature { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
