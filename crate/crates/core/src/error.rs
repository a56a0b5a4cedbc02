use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Configuration violates a documented constraint.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Input data is malformed or insufficient.
    #[error("invalid input: {0}")]
    Input(String),

    /// An asset has no usable observations left after filtering.
    #[error("asset `{asset}` has {count} quote revisions after filtering, need at least 2")]
    EmptyAsset { asset: String, count: usize },

    /// A series is too short for the requested statistic.
    #[error("asset `{asset}`: need more than {needed} observations, got {got}")]
    TooShort {
        asset: String,
        needed: usize,
        got: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    /// A matrix that must be inverted is singular or badly conditioned.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_))
    }
}
