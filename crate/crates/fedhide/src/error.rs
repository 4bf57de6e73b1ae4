//! Error type shared across the simulator.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("degenerate vector: norm {norm:e} is below the normalization threshold")]
    DegenerateVector { norm: f64 },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("invalid dimension {0}: unit vectors need at least 2 components")]
    InvalidDimension(usize),

    #[error("invalid dataset spec: {0}")]
    InvalidSpec(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("inconsistent dimension at row {row}: expected {expected} fields, found {found}")]
    InconsistentDimension {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("no samples found for any class in {0}")]
    EmptyClass(String),

    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("forward trace does not match the given parameters")]
    TraceMismatch,

    #[error("proxy set is empty")]
    EmptyProxySet,

    #[error("neighbor pool is empty")]
    EmptyNeighborPool,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parameter shape mismatch")]
    ShapeMismatch,

    #[error("prototype and proxy tables have different key sets")]
    KeyMismatch,

    #[error("no prototype for class {0}")]
    MissingPrototype(usize),

    #[error("score lists must be nonempty")]
    EmptyScores,

    #[error("invalid inputs: {0}")]
    InvalidInputs(String),

    #[error("convergence bound denominator is not positive ({0:e})")]
    NonPositiveDenominator(f64),

    #[error("trace too short: need at least 2 recorded steps")]
    InsufficientTrace,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("round {round}, client {client_id}: {source}")]
    Training {
        round: usize,
        client_id: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("checkpoint format: {0}")]
    CheckpointFormat(String),
}
