use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("design coordinate {value} outside [{lower}, {upper}]")]
    DesignOutOfBounds { value: f64, lower: f64, upper: f64 },

    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("grid too large: {cells} cells exceeds limit {limit}")]
    GridTooLarge { cells: u128, limit: u128 },

    #[error("degenerate update: all kernel weights zero")]
    DegenerateParticleUpdate,

    #[error("utility positivity unreachable after {attempts} attempts")]
    PositivityUnreachable { attempts: usize },

    #[error("total weight collapse: every particle weight is zero")]
    WeightCollapse,

    #[error("epsilon too tight: no acceptance in {proposals} proposals")]
    EpsilonTooTight { proposals: u64 },

    #[error("schedule too aggressive: generation {generation} stalled after {proposals} proposals")]
    ScheduleTooAggressive { generation: usize, proposals: u64 },

    #[error("zero variance series")]
    ZeroVariance,

    #[error("series too short: {len} < {min}")]
    SeriesTooShort { len: usize, min: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error at {path}: {detail}")]
    Parse { path: String, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
