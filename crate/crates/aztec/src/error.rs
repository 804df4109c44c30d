use thiserror::Error;

/// Everything that can go wrong in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// The caller violated an argument contract (bad lengths, out-of-range orders).
    #[error("usage error: {0}")]
    Usage(String),
    /// An input object is internally inconsistent (invalid chain, bad environment).
    #[error("precondition violated: {0}")]
    Precondition(String),
    /// A contour passes too close to a pole or to the other contour.
    #[error("contour error: {0}")]
    Contour(String),
    /// Quadrature or root finding did not converge.
    #[error("numerical error: {0}")]
    Numerical(String),
    /// A configuration is invalid (support violation, empty band, regime mismatch).
    #[error("config error: {0}")]
    Config(String),
    /// A point lies on or too near a singular set of a closed form.
    #[error("domain error: {0}")]
    Domain(String),
    /// The requested size exceeds what brute force or the sampler supports.
    #[error("refused: {0}")]
    Refused(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Usage(msg.into()))
}
