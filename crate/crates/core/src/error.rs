use std::time::Duration;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the bounding pipeline can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("evaluation budget exhausted ({used}/{total} calls used)")]
    BudgetExhausted { used: usize, total: usize },

    #[error("point {point:?} lies outside the domain")]
    DomainViolation { point: Vec<f64> },

    #[error("black-box evaluation failed: {0}")]
    EvalFailure(String),

    #[error("external evaluator process failed: {0}")]
    ProcessFailure(String),

    #[error("external evaluator did not answer within {0:?}")]
    Timeout(Duration),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("covariance matrix is not positive definite even with jitter {jitter:e}")]
    SingularCovariance { jitter: f64 },

    #[error("trend basis has rank below {columns} on the design")]
    RankDeficientTrend { columns: usize },

    #[error("every candidate has zero posterior variance")]
    DegenerateModel,

    #[error("leave-one-out variance is not positive at design point {index}")]
    DegenerateLeaveOut { index: usize },

    #[error("could not place grid point {index} at least {dmin} away after {attempts} draws")]
    RepairFailure { index: usize, dmin: f64, attempts: usize },

    #[error("order statistics {rank} and {next} are tied at {value}; kappa is undefined")]
    TieFailure { rank: usize, next: usize, value: f64 },

    #[error("only {available} draws are eligible but {target} were requested")]
    InfeasibleTarget { available: usize, target: usize },

    #[error("no importance sample accepted after {draws} draws")]
    RejectionStall { draws: usize },

    #[error("bound never drops below 2*alpha on [{lo:e}, {hi:e}]")]
    NoCrossing { lo: f64, hi: f64 },

    #[error("input dimension {dim} exceeds the limit {limit} for grid-based simulation")]
    DimensionTooHigh { dim: usize, limit: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

/// Coarse failure classes, used to pick process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Precondition,
    Budget,
    Numerical,
    External,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::BudgetExhausted { .. } => ErrorClass::Budget,
            Error::DomainViolation { .. }
            | Error::InvalidInput(_)
            | Error::DimensionTooHigh { .. }
            | Error::InfeasibleTarget { .. }
            | Error::Parse(_)
            | Error::Csv(_)
            | Error::Json(_) => ErrorClass::Precondition,
            Error::SingularCovariance { .. }
            | Error::RankDeficientTrend { .. }
            | Error::DegenerateModel
            | Error::DegenerateLeaveOut { .. }
            | Error::RepairFailure { .. }
            | Error::TieFailure { .. }
            | Error::RejectionStall { .. }
            | Error::NoCrossing { .. } => ErrorClass::Numerical,
            Error::EvalFailure(_) | Error::ProcessFailure(_) | Error::Timeout(_) | Error::Io(_) => {
                ErrorClass::External
            }
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
