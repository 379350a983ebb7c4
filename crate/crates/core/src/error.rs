use alloc::string::String;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("input is empty or shorter than one analysis window")]
    EmptyInput,
    #[error("every frame is below the energy threshold")]
    AllSilence,
    #[error("utterance has {got} frames but at least {needed} are required")]
    TooShort { needed: usize, got: usize },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("frame weights sum to {0}, expected 1")]
    WeightsNotNormalized(f64),
    #[error("combined frame weights are all zero")]
    DegenerateWeights,
    #[error("model has no attention component")]
    MissingAttention,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("degenerate corpus: {0}")]
    DegenerateCorpus(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("trial list needs both target and non-target trials")]
    SingleClass,
    #[error("series has zero variance")]
    ZeroVariance,
    #[error("vector is zero after whitening")]
    ZeroVector,
    #[error("need at least {needed} vectors, got {got}")]
    TooFewVectors { needed: usize, got: usize },
    #[error("rank {rank} must be below the supervector dimension {dim}")]
    RankTooLarge { rank: usize, dim: usize },
    #[error("internal consistency check failed: {0}")]
    InternalConsistency(String),
}

pub type Result<T> = core::result::Result<T, Error>;
