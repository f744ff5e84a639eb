use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{what} index {index} out of range (bound {bound})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("discount factor must lie in [0, 1), got {0}")]
    InvalidDiscount(f64),

    /// An iterative routine hit its cap; `last` carries the final iterate.
    #[error("{what} did not converge within {iterations} iterations")]
    NotConverged {
        what: &'static str,
        iterations: usize,
        last: Vec<f64>,
    },

    #[error("empty vector")]
    EmptyVector,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no communicating MDP after {0} draws")]
    RejectionCapExceeded(usize),

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown check '{name}'; valid names: {valid}")]
    UnknownCheck { name: String, valid: String },

    #[error("{failed} of {total} seeds failed; see {manifest}")]
    SeedFailures {
        failed: usize,
        total: usize,
        manifest: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}
