use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("column {0} is constant (zero sample standard deviation)")]
    ConstantColumn(usize),

    #[error("not a valid correlation matrix: {0}")]
    DegenerateCorrelation(String),

    #[error("positive-definite repair did not converge within {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("eigenvalues are not distinct (gap {gap:e} between axes {first} and {second})")]
    DegenerateSpectrum { first: usize, second: usize, gap: f64 },

    #[error("eigenvalue of axis {axis} is {value:e}, at or below the floor")]
    ZeroEigenvalue { axis: usize, value: f64 },

    #[error("segment variance {0:e} is below the variance floor")]
    DegenerateSegment(f64),

    #[error("lag extension needs {needed} observations, only {available} available")]
    InsufficientHistory { needed: usize, available: usize },

    #[error("too few bootstrap replicates: {0}")]
    InsufficientReplicates(String),

    #[error("too few detections for an EDD estimate: {found} < {required}")]
    TooFewDetections { found: usize, required: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NoConvergence { .. }
                | Error::DegenerateSpectrum { .. }
                | Error::ZeroEigenvalue { .. }
                | Error::DegenerateSegment(_)
                | Error::DegenerateCorrelation(_)
                | Error::TooFewDetections { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
