use thiserror::Error;

/// Errors raised across the training and accounting pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid noise parameters: {0}")]
    InvalidNoise(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("ratio moment diverges for {family} at k={k}, tau={tau}")]
    MomentDiverges { family: String, k: u32, tau: f64 },

    #[error("quadrature failed to converge: {0}")]
    Quadrature(String),

    #[error("negative RDP value {value} at alpha={alpha} (sign convention violated)")]
    NegativeRdp { alpha: u32, value: f64 },

    #[error("RDP curves have mismatched order grids ({left} vs {right})")]
    GridMismatch { left: u32, right: u32 },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value in {what}{}", iteration.map(|i| format!(" at iteration {i}")).unwrap_or_default())]
    NonFinite { what: String, iteration: Option<usize> },

    #[error("malformed {kind} file: {reason}")]
    Format { kind: &'static str, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
