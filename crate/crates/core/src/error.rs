use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("zero vector where a direction is required")]
    ZeroVector,

    #[error("no complement: the given vectors span R^{0}")]
    NoComplement(usize),

    #[error("packing too coarse: {0}")]
    PackingTooCoarse(String),

    #[error("lemma hypothesis violated: query {query} lies in the sector of the selected member {member}")]
    LemmaViolated { member: usize, query: usize },

    #[error("no evading subspace of dimension {dim} found after examining {examined} candidates")]
    NotFound { dim: usize, examined: usize },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("adversary defeated in round {round}: no evading subspace for {} queries", queries.len())]
    AdversaryDefeated { round: usize, queries: Vec<Vec<f64>> },

    #[error("consistency breach: {0}")]
    ConsistencyBreach(String),

    #[error("linear independence violated at step {step}: smallest singular value {sigma_min:e}")]
    IndependenceViolated { step: usize, sigma_min: f64 },

    #[error("ill-conditioned system: condition number {0:e}")]
    IllConditioned(f64),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("config error: {field}: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// True for errors that signal a broken invariant rather than bad input.
    pub fn is_invariant_breach(&self) -> bool {
        matches!(
            self,
            Error::Invariant(_)
                | Error::ConsistencyBreach(_)
                | Error::LemmaViolated { .. }
                | Error::IndependenceViolated { .. }
        )
    }
}
