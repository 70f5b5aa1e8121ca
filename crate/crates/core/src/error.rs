use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, dimensions or layer lists that do not compose.
    #[error("structural error: {0}")]
    Structural(String),

    /// A NaN or infinity showed up where a finite value was required.
    #[error("numerical error at {location}: {detail}")]
    Numerical { location: String, detail: String },

    /// An API called out of order (backward before forward, step after done, ...).
    #[error("usage error: {0}")]
    Usage(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("infeasible problem: {0}")]
    Infeasible(String),

    /// An iterative solver ran out of iterations. `trace` carries whatever
    /// diagnostic record the solver produced, serialized as JSON.
    #[error("no convergence after {iterations} iterations (last change {last_change:e})")]
    Convergence {
        iterations: usize,
        last_change: f64,
        trace: String,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn numerical(location: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numerical {
            location: location.into(),
            detail: detail.into(),
        }
    }
}
