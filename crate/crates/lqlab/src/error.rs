use thiserror::Error;

/// Errors produced by the lattice LQG laboratory.
#[derive(Debug, Error)]
pub enum LqlError {
    /// Invalid configuration values (grid shape, parameter ranges).
    #[error("configuration error: {0}")]
    Config(String),

    /// Inputs outside the domain of an operation (ring leaves grid, mismatched grids, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Numerical failure (exponent overflow, solver divergence).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Endpoints disconnected within the requested region.
    #[error("no path between {0} and {1} in the requested region")]
    NoPath(String, String),

    /// No coalescence point was detected; caller should enlarge the grid or lower rho.
    #[error("empty renewal: {0}")]
    EmptyRenewal(String),

    /// Detected records and the traced geodesic disagree.
    #[error("inconsistent renewal data: {0}")]
    Internal(String),

    /// Ratio with zero denominator (no positive Y in the past).
    #[error("undefined ratio: {0}")]
    UndefinedRatio(String),

    /// Correlation of a constant sequence.
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    /// Degenerate sample set (all values equal, nonpositive, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Mesh too coarse for the requested resolution.
    #[error("resolution error: {0}")]
    Resolution(String),

    /// Too few replicates for a statistical estimate.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Probe meshes of two objects do not match.
    #[error("mesh mismatch: {0}")]
    MeshMismatch(String),

    /// Test function support violates the required region.
    #[error("support violation: {0}")]
    SupportViolation(String),
}

pub type Result<T> = std::result::Result<T, LqlError>;
