use thiserror::Error;

/// Errors raised while building inputs, solving, or simulating.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("type {id:?}: {field} must be {requirement}, got {value}")]
    InvalidField {
        id: String,
        field: &'static str,
        requirement: &'static str,
        value: f64,
    },
    #[error("duplicate type id {0:?}")]
    DuplicateId(String),
    #[error("distribution has no types")]
    NoTypes,
    #[error("distribution has zero total mass")]
    ZeroMass,
    #[error("breakage rate must be positive and finite, got {0}")]
    InvalidRate(f64),
    #[error("tolerance must be positive and finite, got {0}")]
    InvalidTolerance(f64),
    #[error("types are not ordered: {0}")]
    NotOrdered(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("too many types for exhaustive oracle: {got} > {max}")]
    TooManyTypes { got: usize, max: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("simulation requires an explicit seed")]
    MissingSeed,
    #[error("solver degenerate: {0}")]
    Degenerate(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_rate(rho: f64) -> Result<()> {
    if rho.is_finite() && rho > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidRate(rho))
    }
}

pub(crate) fn check_tol(tol: f64) -> Result<()> {
    if tol.is_finite() && tol > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidTolerance(tol))
    }
}
