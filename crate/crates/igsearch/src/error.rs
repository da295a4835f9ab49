use thiserror::Error;

/// Crate-wide error type. Variants map one-to-one onto the failure modes of
/// the public operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed tag: {0}")]
    MalformedTag(String),
    #[error("segment order violation: {0}")]
    OrderViolation(String),
    #[error("trajectory exceeds the search budget: {got} searches > T_max = {max}")]
    TooManySearches { got: usize, max: usize },
    #[error("no search step {0} in trajectory")]
    NoSuchStep(usize),

    #[error("world spec is infeasible: {0}")]
    SpecInfeasible(String),
    #[error("retrieval query is empty")]
    EmptyQuery,

    #[error("answer is empty")]
    EmptyAnswer,
    #[error("scoring context has {len} tokens, limit is {max}")]
    ContextTooLong { len: usize, max: usize },
    #[error("{got} gold aliases exceed the cap of {max}")]
    TooManyAliases { got: usize, max: usize },
    #[error("error at batch index {index}: {source}")]
    AtIndex {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("counterfactual pool has no eligible pairs for question {question}")]
    PoolExhausted { question: usize },
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparam(String),

    #[error("IG records do not align with the trajectory's search steps: {0}")]
    MisalignedRecords(String),
    #[error("token position {0} is not a policy token")]
    NotPolicyToken(usize),
    #[error("non-finite gradient at iteration {0}")]
    NonFiniteGradient(usize),

    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("missing metrics: {0}")]
    MissingMetrics(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
