use thiserror::Error;

/// Errors raised by the inference engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("truncation region carries numerically zero mass (log mass {log_mass:.3})")]
    DegenerateTruncation { log_mass: f64 },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("value outside support: {0}")]
    OutsideSupport(String),

    #[error("moment generating function overflows (log value {log_mgf})")]
    MgfOverflow { log_mgf: f64 },

    #[error("invalid data for subject `{subject}`: {reason}")]
    InvalidData { subject: String, reason: String },

    #[error("decode produced a non-finite value at unconstrained index {index} ({what})")]
    Decode { index: usize, what: String },

    #[error(
        "non-finite log posterior (survival {survival}, random effects {random_effects}, \
         longitudinal {longitudinal}, prior {prior}, jacobian {jacobian})"
    )]
    NonFiniteLogPosterior {
        survival: f64,
        random_effects: f64,
        longitudinal: f64,
        prior: f64,
        jacobian: f64,
    },

    #[error("non-finite gradient at coordinate {index}")]
    NonFiniteGradient { index: usize },

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("sampler failure: {0}")]
    Sampler(String),

    #[error("insufficient draws: {0}")]
    InsufficientDraws(String),

    #[error("{0}")]
    Simulation(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name: name.to_string(),
        reason: reason.into(),
    }
}
