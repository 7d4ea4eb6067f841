use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("vector has zero norm")]
    ZeroVector,

    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("operator is not Hermitian (max |M - M^H| = {0:e})")]
    NotHermitian(f64),

    #[error("operator is not positive semi-definite (min eigenvalue {0:e})")]
    NotPositive(f64),

    #[error("trace must be 1 (got {0})")]
    InvalidTrace(f64),

    #[error("imaginary residue {0:e} exceeds tolerance")]
    ImaginaryResidue(f64),

    #[error("state is not normalized (norm {0})")]
    NotNormalized(f64),

    #[error("dimension {0} is not a perfect square")]
    NonSquareDimension(usize),

    #[error("background epsilon {epsilon} is below the minimal admissible value {minimum}")]
    EpsilonBelowMinimum { epsilon: f64, minimum: f64 },

    #[error("functional must vanish at the origin (f(0) = {0})")]
    NonzeroAtOrigin(f64),

    #[error("quadratic part is not phase invariant (residual {0:e})")]
    NotPhaseInvariant(f64),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("need at least {needed} samples, got {found}")]
    InsufficientSamples { needed: usize, found: usize },

    #[error("no accepted coincidences")]
    NoCoincidences,

    #[error("correlation table is missing entry ({0}, {1})")]
    MissingEntry(usize, usize),

    #[error("data violates no-signalling: {0}")]
    Signalling(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        Error::Io(err.to_string())
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
