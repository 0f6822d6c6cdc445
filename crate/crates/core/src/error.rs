use thiserror::Error;

/// Errors raised by problem evaluation, relaxation building and the solvers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("point is infeasible: {0}")]
    Infeasible(String),

    #[error("enumeration cap exceeded: {count} biactive/switching indices, cap is {cap}")]
    EnumerationCap { count: usize, cap: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown problem `{0}`")]
    UnknownProblem(String),

    #[error("missing row provenance: {0}")]
    MissingProvenance(String),

    #[error("all branches infeasible")]
    AllBranchesInfeasible,

    #[error("empty result matrix")]
    EmptyResults,

    #[error("csv output failed: {0}")]
    Csv(String),
}

pub type Result<T> = std::result::Result<T, Error>;
