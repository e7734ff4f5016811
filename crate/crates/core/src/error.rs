use thiserror::Error;

/// Errors produced by map construction, solvers, codecs and the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Two grids that must agree in size do not.
    #[error("shape mismatch: {context}: {expected} vs {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    /// A map or matrix contains NaN or infinite entries.
    #[error("non-finite value in {context} at index {index}")]
    NonFinite { context: &'static str, index: usize },

    /// A scalar argument is outside its admissible range.
    #[error("invalid argument {name}: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    /// A per-pixel invariant of a map failed validation.
    #[error("invalid map data: {reason} (first offending pixel {pixel})")]
    InvalidMap { reason: String, pixel: usize },

    /// Point annotations violate their invariants.
    #[error("invalid annotations: {0}")]
    InvalidPoints(String),

    /// A transport problem violates its invariants.
    #[error("invalid transport problem: {0}")]
    InvalidProblem(String),

    /// Plain Sinkhorn over/underflowed; the log-domain path avoids this.
    #[error("sinkhorn produced a non-finite scaling at iteration {iteration}; retry with log_domain = true")]
    SinkhornNumeric { iteration: usize },

    /// The exact solver is restricted to small instances.
    #[error("exact solver limit exceeded: m*n = {size} > {limit}")]
    OracleScale { size: usize, limit: usize },

    /// File decoding failed.
    #[error("codec error in {path}: {reason}")]
    Codec { path: String, reason: String },

    /// A scene description is malformed or inconsistent.
    #[error("invalid scene: {0}")]
    InvalidScene(String),

    /// An internal invariant that must hold by construction was violated.
    #[error("internal invariant violated: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
