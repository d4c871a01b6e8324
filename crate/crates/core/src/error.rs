use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum FamcError {
    #[error("config parse error: {0}")]
    Parse(String),

    #[error("constraint violated: {0}")]
    Constraint(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid simulation settings: {0}")]
    InvalidSettings(String),

    #[error("quadrature failed to converge on [{a}, {b}] (estimated error {error:e})")]
    Quadrature { a: f64, b: f64, error: f64 },

    #[error("non-finite drift at t = {0} s")]
    NonFiniteDrift(f64),

    #[error("ISI enumeration limited to memory <= {max}, got {requested}")]
    EnumerationGuard { requested: usize, max: usize },

    #[error("overlapping field windows: phase I ends at {phase1_end} s, phase II starts at {phase2_start} s")]
    OverlappingWindows { phase1_end: f64, phase2_start: f64 },

    #[error("invalid CIR table: {0}")]
    InvalidCir(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, FamcError>;
