use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("invalid configuration: {field}: {reason}")]
    Config { field: String, reason: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("operation requires quadratic objectives")]
    NotQuadratic,

    #[error("optimum is zero, normalized error is undefined")]
    ZeroOptimum,

    #[error("curvature matrix is not positive definite (node {node})")]
    NotPositiveDefinite { node: usize },

    #[error("non-finite value at iteration {iteration}: {what} (step size too large?)")]
    Divergence { iteration: usize, what: &'static str },

    #[error("missing descent contribution from node {from} to node {to}")]
    MissingContribution { from: usize, to: usize },

    #[error("staleness bound violated at tick {tick}: node {node} holds view of {neighbor} from tick {stamp}")]
    Staleness {
        tick: usize,
        node: usize,
        neighbor: usize,
        stamp: usize,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
