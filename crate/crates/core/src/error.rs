use thiserror::Error;

/// Errors raised by the channel model, the rate engines and the optimizer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    /// The users' channels are (numerically) linearly dependent.
    #[error("singular channel: Gram condition estimate {condition:e} exceeds limit")]
    SingularChannel { condition: f64 },

    #[error("degenerate scenario: {0}")]
    Degenerate(String),

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("numeric failure in {0}")]
    Numeric(String),

    #[error("infeasible antenna layout: {0}")]
    Infeasible(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
