use thiserror::Error;

use crate::instance::InstanceError;

/// Failures of a solver run.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum SolveError {
    #[error("step cap of {cap} micro-steps exceeded")]
    StepCapExceeded { cap: u64 },
    #[error("proof violation in {rule}: {detail}")]
    ProofViolation { rule: String, detail: String },
}

impl SolveError {
    pub fn violation(rule: impl Into<String>, detail: impl Into<String>) -> Self {
        SolveError::ProofViolation {
            rule: rule.into(),
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("malformed allocation document: {0}")]
    Allocation(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}
