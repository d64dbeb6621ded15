use thiserror::Error;

/// Library-wide error type. Numeric payloads are stored as f64 since errors
/// are diagnostics, not data.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("empty set: {0}")]
    EmptySet(String),

    #[error("infeasible point: {0}")]
    Infeasible(String),

    #[error("invalid parameters: {0}")]
    InvalidParameters(String),

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("divergence{}: first non-finite or oversized component {component}", slot_suffix(.slot))]
    Divergence {
        /// Time slot at which the iteration blew up, when known.
        slot: Option<usize>,
        component: String,
    },

    #[error("no convergence after {iterations} iterations (best residual {best_residual:e})")]
    NoConvergence {
        best_residual: f64,
        iterations: usize,
    },

    #[error("bound not applicable: {0}")]
    BoundNotApplicable(String),

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("profile data: {0}")]
    Profile(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

fn slot_suffix(slot: &Option<usize>) -> String {
    match slot {
        Some(tau) => format!(" at slot {tau}"),
        None => String::new(),
    }
}

pub type Result<T> = std::result::Result<T, Error>;
