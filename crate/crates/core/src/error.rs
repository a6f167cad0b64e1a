use thiserror::Error;

use crate::model::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Argument outside the domain of a utility function.
    #[error("{what} must be positive, got {value}")]
    Domain { what: &'static str, value: f64 },

    #[error("period {t} is outside the horizon 0..={horizon}")]
    Index { t: usize, horizon: usize },

    #[error("invalid economy: {}", format_violations(.0))]
    Invalid(Vec<Violation>),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("regime error: {0}")]
    Regime(String),

    /// Inner multiplier solve could not bracket the clearing condition.
    #[error("planner solve failed at period {period}: {reason}")]
    Bracket { period: usize, reason: String },

    #[error("no convergence after {iterations} iterations (best residual {best_residual:e})")]
    NonConvergence { iterations: usize, best_residual: f64 },

    /// A continuation member failed to solve.
    #[error("family member at parameter {parameter} failed: {source}")]
    Member { parameter: f64, source: Box<Error> },

    /// An internal identity failed to hold; indicates a solver bug.
    #[error("internal consistency fault: {0}")]
    Consistency(String),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| format!("{}: {}", v.field, v.message))
        .collect::<Vec<_>>()
        .join("; ")
}
