use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is numerically rank deficient (condition ratio {ratio:.3e})")]
    RankDeficient { ratio: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },

    #[error("empty input")]
    EmptyInput,

    #[error("every point exceeded the norm threshold {omega}")]
    AllFiltered { omega: f64 },

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("least-squares system is ill conditioned (smallest singular value {sigma_min:.3e})")]
    IllConditioned { sigma_min: f64 },

    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),

    #[error("{total} cannot be split evenly into {parts} parts")]
    IndivisibleSplit { total: usize, parts: usize },

    #[error("estimated singular value gap is not positive ({0:.3e})")]
    DegenerateGap(f64),

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("unknown suite `{0}`")]
    UnknownSuite(String),

    #[error("node {node}: {source}")]
    Node {
        node: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dims(expected: impl ToString, got: impl ToString) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn at_node(self, node: usize) -> Self {
        Error::Node {
            node,
            source: Box::new(self),
        }
    }
}
