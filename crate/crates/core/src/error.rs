use thiserror::Error;

/// Errors raised by chain construction and analysis.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("negative mass {value} at index {index}")]
    NegativeMass { index: usize, value: f64 },
    #[error("weights sum to {sum}, not 1")]
    NotNormalized { sum: f64 },
    #[error("invalid state space: {0}")]
    InvalidStateSpace(String),
    #[error("row {row} is not stochastic: {reason}")]
    RowNotStochastic { row: usize, reason: String },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("insufficient decay: {usable} usable points above the floor (need at least 4 and a negative slope)")]
    InsufficientDecay { usable: usize },
    #[error("invariant kernel entry ({row}, {col}) is zero; ratio bound undefined")]
    ZeroInvariantEntry { row: usize, col: usize },
    #[error("measure is not invariant for the kernel (TV residual {residual:e})")]
    NotInvariant { residual: f64 },
    #[error("flow too short: need {needed} measures, have {found}")]
    FlowTooShort { needed: usize, found: usize },
    #[error("flow was generated by a different kernel or initial law")]
    KernelMismatch,
    #[error("empty trajectory")]
    EmptyTrajectory,
    #[error("sigma^2 is degenerate but a sample is {max_abs:e} away from 0")]
    DegenerateRequiresExactZero { max_abs: f64 },
    #[error("enumeration of {paths} paths exceeds the limit of {limit}")]
    TooLarge { paths: f64, limit: f64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
