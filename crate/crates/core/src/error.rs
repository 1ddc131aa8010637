use thiserror::Error;

/// Crate-wide error type. Variants map to exit codes at the CLI boundary.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration: bad shapes, unknown kinds, missing fields.
    #[error("config error: {0}")]
    Config(String),
    /// API misuse: backward without forward, empty batch, split violation.
    #[error("usage error: {0}")]
    Usage(String),
    /// Coordinate outside the [0,1] domain.
    #[error("domain error: {0}")]
    Domain(String),
    /// NaN or infinity detected in values, gradients, or the loss.
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable machine-readable tag, emitted in CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Usage(_) => "usage",
            Error::Domain(_) => "domain",
            Error::NonFinite(_) => "non_finite",
            Error::Io(_) => "io",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Usage(_) | Error::Domain(_) => 2,
            Error::NonFinite(_) => 3,
            Error::Io(_) => 4,
        }
    }
}
