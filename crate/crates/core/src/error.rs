use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A scalar or vector argument fell outside its admissible range.
    #[error("domain error: {what} = {value} is outside {range}")]
    Domain {
        what: &'static str,
        value: f64,
        range: String,
    },

    /// A matrix argument has the wrong shape.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A matrix that must be positive (semi)definite is not.
    #[error("{what} is not positive {kind}definite (min eigenvalue {min_eig:e}, tolerance {tol:e})")]
    NotPositive {
        what: String,
        kind: &'static str,
        min_eig: f64,
        tol: f64,
    },

    /// A matrix that must be invertible is numerically singular.
    #[error("{0} is numerically singular")]
    Singular(String),

    /// Derived quantities contradict a structural guarantee; signals corrupted input.
    #[error("internal consistency violated: {0}")]
    InternalConsistency(String),

    /// A documented precondition of an operation is not met.
    #[error("precondition failed: {0}")]
    Precondition(String),

    /// A configured resource cap would be exceeded.
    #[error("resource cap exceeded: {what} = {requested} exceeds the cap {cap}")]
    Resource {
        what: &'static str,
        requested: usize,
        cap: usize,
    },

    /// Scenario or input files failed to parse or validate.
    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
