use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid model parameters: {0}")]
    InvalidParams(String),

    #[error("step size {delta} is not admissible: {reason}")]
    StepSize { delta: f64, reason: String },

    #[error("truncation rule rejected: {0}")]
    Truncation(String),

    #[error("non-finite state produced ({0})")]
    NonFinite(String),

    #[error("implicit step has no real root (discriminant {discriminant})")]
    NoRealRoot { discriminant: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("incompatible grids: {0}")]
    GridIncompatible(String),

    #[error("step {index}: {source}")]
    Step {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("insufficient sample: {usable} usable paths, at least {required} required")]
    InsufficientSample { usable: usize, required: usize },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("horizon {requested} exceeds simulated horizon {available}")]
    Horizon { requested: f64, available: f64 },

    #[error("ensemble mismatch: {0}")]
    Mismatch(String),
}

impl Error {
    /// True for failures produced while advancing a path (as opposed to
    /// configuration or contract errors).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NonFinite(_) | Error::NoRealRoot { .. } | Error::Domain(_) => true,
            Error::Step { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
