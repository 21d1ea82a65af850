use thiserror::Error;

/// Errors shared across the simulation modules.
#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate mode label {0}")]
    DuplicateMode(String),
    #[error("unknown mode {0}")]
    UnknownMode(String),
    #[error("mode {0} already present")]
    ModeAlreadyPresent(String),
    #[error("element expects {expected} modes, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix is not unitary (max deviation {0:.3e})")]
    NotUnitary(f64),
    #[error("{name} out of range: {value}")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("states are defined over different mode sets")]
    ModeMismatch,
    #[error("mode {0} is occupied and cannot be removed")]
    ModeNotVacuum(String),
    #[error("basis too large: {0} states")]
    BasisTooLarge(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("division by zero in {0}")]
    DivideByZero(&'static str),
    #[error("degenerate fit input: {0}")]
    DegenerateFit(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
