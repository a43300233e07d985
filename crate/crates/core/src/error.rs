use thiserror::Error;

/// Crate-wide error type.
///
/// Integration aborts carry the time and state data needed to tell a
/// genuine model-range violation (speed approaching the clamp boundary,
/// hypothesis bound exceeded) from plain bad input.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("iteration failed to converge: {0}")]
    NoConvergence(String),

    #[error("evaluation outside supported domain: {0}")]
    Domain(String),

    /// The microscopic run left the velocity region `|v| <= vbar` the
    /// memory kernel was tabulated for; results past this time would be
    /// outside the regime the model is valid in.
    #[error("speed bound exceeded at t = {t}: |v| = {speed} > {bound} (out of hypothesis; shrink eps or raise vbar)")]
    SpeedBound { t: f64, speed: f64, bound: f64 },

    /// An effective-dynamics run reached the clamp boundary `|u| = 1 - deltabar`
    /// where the coefficient tensors are frozen; the reduced description does
    /// not apply there (eps too large, or the regime assumption fails).
    #[error("velocity reached the clamp boundary at t = {t}: |u| = {speed} >= {limit} (effective description out of range)")]
    ClampBoundary { t: f64, speed: f64, limit: f64 },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
