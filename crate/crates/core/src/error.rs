use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("graph has no areas")]
    EmptyGraph,
    #[error("area index {index} out of range 1..={n}")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("self-loop on area {0}")]
    SelfLoop(usize),
    #[error("eigen-decomposition of the adjacency matrix failed")]
    Eigen,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(&'static str),
    #[error("latent value {0} lies exactly on a cut point")]
    TieAtCutPoint(f64),
    #[error("every mixture component has zero likelihood")]
    ZeroLikelihood,
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("empty trace")]
    EmptyTrace,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
