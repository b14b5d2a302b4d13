use thiserror::Error;

use crate::store::ClusterPair;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot normalize a zero-length vector")]
    ZeroVector,

    #[error("vector norm {norm} is not within tolerance of 1")]
    NotUnit { norm: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("class id {class_id} out of range for {num_classes} classes")]
    BadClass { class_id: usize, num_classes: usize },

    #[error("class {class_id} buffer holds {available} embeddings, need at least {required}")]
    InsufficientData {
        class_id: usize,
        available: usize,
        required: usize,
    },

    #[error("class {class_id} has an empty buffer")]
    EmptyBuffer { class_id: usize },

    #[error("prototype of class {class_id} is undefined")]
    UndefinedPrototype { class_id: usize },

    #[error("invalid argument: {0}")]
    BadArg(String),

    #[error("prototypes of pair {pair} are antipodal; midpoint undefined")]
    AntipodalPrototypes { pair: ClusterPair },

    #[error("OOD-ness vanishes at this position (coincides with a buffered neighbor)")]
    DegenerateDensity,

    #[error("need at least {required} samples, got {got}")]
    TooFewSamples { required: usize, got: usize },

    #[error("invalid configuration: {0}")]
    BadConfig(String),

    #[error("malformed data file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::BadConfig(_) | Error::BadArg(_) => 2,
            Error::ZeroVector | Error::AntipodalPrototypes { .. } | Error::DegenerateDensity => 4,
            _ => 3,
        }
    }
}
