use thiserror::Error;

/// One continuation step that was attempted before a failure.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct StepRecord {
    pub n: f64,
    pub newton_iters: usize,
    pub residual: f64,
    pub interior_change: Option<f64>,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid resolution: m = {0}, need m >= 3")]
    InvalidResolution(usize),

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("margin error: {0}")]
    Margin(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("linear solve failed: {reason} (residual {residual:e})")]
    LinearSolve { reason: String, residual: f64 },

    #[error("regularized solve at n = {n} did not converge in {} Newton iterations (last residual {:e})", .residuals.len(), .residuals.last().copied().unwrap_or(f64::NAN))]
    RegularizedSolve { n: f64, residuals: Vec<f64> },

    #[error("continuation reached n_max = {n_max} without interior convergence after {} steps", .history.len())]
    Continuation {
        n_max: f64,
        history: Vec<StepRecord>,
    },

    #[error("obstacle minimization did not converge in {} iterations (last projected gradient {:e})", .history.len(), .history.last().copied().unwrap_or(f64::NAN))]
    ObstacleNonConvergence { history: Vec<f64> },

    #[error("expression error at offset {offset}: {message}")]
    Expr { offset: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
