use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("transition kernel is not ergodic: {0}")]
    NonErgodicChain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("feature Gram matrix is rank deficient (smallest eigenvalue {min_eigenvalue:e})")]
    RankDeficientFeatures { min_eigenvalue: f64 },

    #[error("linear system is numerically singular: {0}")]
    SingularSystem(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("discount factor {0} outside the admissible range")]
    InvalidGamma(f64),

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("invalid gridworld spec: {0}")]
    InvalidSpec(String),

    #[error("schedule violates the convergence conditions: {0}")]
    ScheduleInfeasible(String),

    #[error("no finite schedule satisfies the conditions: {0}")]
    InfeasibleInputs(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
