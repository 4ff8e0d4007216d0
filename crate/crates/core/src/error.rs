use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("label outside {{+1,−1}}: got {value} at {location}")]
    InvalidLabel { value: i64, location: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("δ < 1 makes π constraints infeasible (δ = {0})")]
    InfeasibleDelta(f64),

    #[error("subspace dimension r = {r} must satisfy 1 ≤ r < m = {m}")]
    SubspaceDim { r: usize, m: usize },

    #[error("neighbor count k = {k} must satisfy 1 ≤ k ≤ n − 1 for a set of {n} points")]
    NeighborCount { k: usize, n: usize },

    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparam(String),

    #[error("infeasible QP: {0}")]
    InfeasibleQp(String),

    #[error("QP Hessian is not positive semidefinite (smallest eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("QP did not converge within {0} active-set steps")]
    QpNotConverged(usize),

    #[error("non-finite gradient in the classifier step")]
    NonFiniteGradient,

    #[error("eigendecomposition failed: {0}")]
    Eigen(String),

    #[error("degenerate one-vs-all class {0}: no positive labeled source examples")]
    DegenerateClass(i64),

    #[error("invalid fold setup: {0}")]
    Folds(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("model format: {0}")]
    Format(String),

    #[error("config: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// True for failures of the numerical routines themselves, as opposed to
    /// rejected input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NotPsd(_) | Error::QpNotConverged(_) | Error::NonFiniteGradient | Error::Eigen(_)
        )
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
