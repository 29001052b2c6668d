use thiserror::Error;

/// Errors shared across the solver modules.
///
/// `NonConvergence` is the only variant that reports an exhausted iteration
/// budget; everything else is an input or precondition failure.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    Model(String),

    #[error("point is not on the unit level set: phi(a) = {phi}")]
    OffBoundary { phi: f64 },

    #[error("point is on the lower boundary: d(phi)/d(beta) = {dphi_dbeta} < 0")]
    NotUpperBoundary { dphi_dbeta: f64 },

    #[error("drift {drift} has the wrong sign for this solver")]
    DriftSign { drift: f64 },

    #[error("height {y} outside the table range 1..={l}")]
    TableRange { y: i64, l: i64 },

    #[error("velocity is outside the attainable range")]
    VelocityOutOfRange,

    #[error("fields were solved on different boxes and cannot be compared")]
    BoxMismatch,

    #[error("denominator vanished in a kernel ratio")]
    ZeroDenominator,

    #[error("{0}")]
    Domain(String),

    #[error("{what} did not converge (residual {residual:.3e})")]
    NonConvergence { what: &'static str, residual: f64 },
}

impl Error {
    /// True when the failure is an exhausted iteration budget rather than
    /// a rejected input.
    pub fn is_non_convergence(&self) -> bool {
        matches!(self, Error::NonConvergence { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
