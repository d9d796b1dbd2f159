use thiserror::Error;

/// Failure modes of model construction, law arithmetic and the iteration schemes.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("degenerate model: {0}")]
    DegenerateModel(String),
    #[error("unsupported model: {0}")]
    UnsupportedModel(String),
    #[error("unsupported representation: {0}")]
    UnsupportedRepresentation(String),
    #[error("unsupported scheme: {0}")]
    UnsupportedScheme(String),
    #[error("insufficient particles: {0}")]
    InsufficientParticles(String),
    #[error("step size {h} exceeds the admissible bound {max} for {scheme}")]
    StepSize { scheme: String, h: f64, max: f64 },
    #[error("non-finite value at iteration {iteration}: {what}")]
    Divergence { iteration: usize, what: String },
    #[error("model is not strongly log-concave: {0}")]
    NotLogConcave(String),
    #[error("no certificate: {0}")]
    NoCertificate(String),
    #[error("invalid constants: {0}")]
    InvalidConstants(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
