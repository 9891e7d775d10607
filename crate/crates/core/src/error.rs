use thiserror::Error;

use crate::mdp::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {}", join_violations(.0))]
    InvalidModel(Vec<Violation>),

    #[error("invalid risk specification: {0}")]
    InvalidRisk(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The iteration grew without bound, or the model was shown not to be
    /// risk-transient for the policy in question.
    #[error("divergence detected at iteration {iteration}: {reason}")]
    Divergence {
        iteration: usize,
        reason: String,
        /// Control indices of the offending policy, if one was involved.
        policy: Option<Vec<usize>>,
    },

    /// Ran out of iterations without meeting the stopping rule.
    #[error("inconclusive after {iterations} iterations (last residual {residual:e})")]
    Inconclusive { iterations: usize, residual: f64 },

    #[error("model file: {0}")]
    Json(#[from] serde_json::Error),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}
