use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("invalid partition: {0}")]
    Partition(String),

    #[error("invalid switching signal: {0}")]
    Signal(String),

    #[error("invalid interval: t1 ({t1}) must exceed t0 ({t0})")]
    Interval { t0: f64, t1: f64 },

    #[error("eigensolver failed: {0}")]
    Eigen(String),

    #[error("plant is not stabilizable: mode λ = {re} + {im}i cannot be reached through B")]
    NotStabilizable { re: f64, im: f64 },

    #[error("Riccati solver did not converge (residual {residual:e})")]
    Riccati { residual: f64 },

    #[error("cluster {cluster} has no positive diagonal scaling: {reason}")]
    Scaling { cluster: usize, reason: String },

    #[error("coupling threshold undefined for cluster {cluster}: denominator {denominator:e} ≤ 0")]
    Threshold { cluster: usize, denominator: f64 },

    #[error("invalid simulation config: {0}")]
    Config(String),

    #[error("simulation diverged at t = {time} (last finite state at t = {last_finite})")]
    Diverged { time: f64, last_finite: f64 },

    #[error("decay fit failed: {0}")]
    Fit(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("scenario error at `{path}`: {message}")]
    Scenario { path: String, message: String },
}

impl Error {
    pub(crate) fn scenario(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Scenario {
            path: path.into(),
            message: message.into(),
        }
    }
}
