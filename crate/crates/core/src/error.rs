use thiserror::Error;

use crate::sim::CollisionReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("vehicle ordering violated: leader at {lead:.3} m is behind follower at {follow:.3} m")]
    OrderingViolation { lead: f64, follow: f64 },

    #[error("invalid lane-change event: {0}")]
    InvalidEvent(String),

    #[error("gamma_2 = {0:e} is too close to zero to recover car-following parameters")]
    DegenerateGamma(f64),

    #[error("RLS denominator is not positive ({0:e})")]
    NumericalBreakdown(f64),

    #[error("weighted Gram matrix is rank deficient (eigenvalue ratio {0:e})")]
    SingularGram(f64),

    #[error("QP solver: {0}")]
    Qp(#[from] crate::rhc::qp::QpError),

    #[error("collision detected at t = {:.2} s between vehicles {} and {}", .0.time, .0.lead_id, .0.follow_id)]
    CollisionDetected(Box<CollisionReport>),

    #[error("scenario: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
