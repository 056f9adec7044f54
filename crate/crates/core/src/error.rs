use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("value outside domain: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite membrane potential on neuron {neuron} at t={time}")]
    NumericFault { neuron: usize, time: f64 },

    #[error("intensity bound overflow on node {node}: {bound} events/s")]
    IntensityOverflow { node: usize, bound: f64 },

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("oracle precondition failed: {0}")]
    Oracle(String),

    #[error("prediction undefined: {0}")]
    Undefined(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Errors caused by bad input rather than a failed computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Validation(_)
                | Error::Domain(_)
                | Error::Shape(_)
                | Error::Json(_)
        )
    }
}
