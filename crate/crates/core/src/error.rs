use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes or block layouts do not line up.
    #[error("structural mismatch: {0}")]
    Structural(String),

    /// A value lies outside the domain an operation is defined on.
    #[error("domain error: {0}")]
    Domain(String),

    /// Zero within-batch variance at a batch-normalized unit with no variance floor.
    #[error("degenerate batch statistics at layer {layer}, unit {unit} (zero variance with eps = 0)")]
    DegenerateStatistics { layer: usize, unit: usize },

    /// A point handed to a manifold operation is not on the sphere it claims.
    #[error("manifold consistency: {0}")]
    Consistency(String),

    #[error("singular retraction: x + eta is the zero vector")]
    SingularRetraction,

    #[error("quadrature node {node} failed: {source}")]
    QuadratureNode {
        node: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
