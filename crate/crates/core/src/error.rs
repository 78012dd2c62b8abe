use thiserror::Error;

/// Errors raised by lattice construction, series builders and diagnostics.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid density: {0}")]
    InvalidDensity(String),

    #[error("inconsistent normalization: total mass {total} differs from 1")]
    InconsistentNormalization { total: f64 },

    #[error("window boundary {x} is not aligned to the lattice (origin {origin}, span {span})")]
    MisalignedWindow { x: f64, origin: f64, span: f64 },

    #[error("lattice mismatch: {0}")]
    LatticeMismatch(String),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("degenerate support: {0}")]
    DegenerateSupport(String),

    #[error("degenerate measure: {0}")]
    DegenerateMeasure(String),

    #[error("series diverges: {0}")]
    SeriesDivergent(String),

    #[error("inversion failed: {0}")]
    InversionFailed(String),

    #[error("grid overflow: {0}")]
    GridOverflow(String),

    #[error("not s-self-decomposable: {0}")]
    NotSSelfDecomposable(String),

    #[error("invalid function sample: {0}")]
    InvalidFunction(String),

    #[error("random walk has no negative drift (mean estimate {mean})")]
    NoNegativeDrift { mean: f64 },

    #[error("ladder series not converged: residual {residual} exceeds {limit}")]
    LadderNotConverged { residual: f64, limit: f64 },

    #[error("unreliable Monte Carlo oracle: {cap_hits} of {paths} paths hit the step cap")]
    UnreliableOracle { cap_hits: u64, paths: u64 },

    #[error("unlabeled family: {0}")]
    Unlabeled(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
