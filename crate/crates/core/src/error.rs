use thiserror::Error;

/// Errors raised by the library. The variants map onto the failure classes
/// the command-line tools report through distinct exit codes.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Input violates a documented precondition (ranges, bounds, units).
    #[error("validation error: {0}")]
    Validation(String),
    /// A configuration value is unusable (e.g. non-positive scale).
    #[error("configuration error: {0}")]
    Configuration(String),
    /// The math is degenerate for this input (zero variance, collinear points, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),
    /// Shapes, counts or graph structure do not fit together.
    #[error("structural error: {0}")]
    Structural(String),
}

pub type Result<T> = std::result::Result<T, Error>;
