use thiserror::Error;

/// Errors raised by the localization library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix does not have the {0} structure")]
    NotLieAlgebra(&'static str),

    #[error("covariance is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("point is behind the camera (depth {depth} <= {z_min})")]
    BehindCamera { depth: f64, z_min: f64 },

    #[error("unknown tag id {0}")]
    UnknownTag(u32),

    #[error("duplicate tag id {0}")]
    DuplicateTag(u32),

    #[error("tag map is empty")]
    EmptyMap,

    #[error("innovation covariance is singular ({rows} rows, smallest diagonal {min_diag:e})")]
    SingularInnovation { rows: usize, min_diag: f64 },

    #[error("no tag visible at trajectory step {step}")]
    NoTagVisible { step: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty sample set")]
    EmptySamples,

    #[error("iteration {iteration} (seed {seed:#018x}) failed: {source}")]
    Iteration {
        iteration: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
