use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix contains non-finite entries")]
    NonFinite,

    #[error("operator is not Hermitian (residual {residual:.3e} > {tol:.1e})")]
    NotHermitian { residual: f64, tol: f64 },

    #[error("operator is not a density operator: {0}")]
    NotDensity(String),

    #[error("state vector is not normalized (norm {0})")]
    NotNormalized(f64),

    #[error("channel is not trace preserving (residual {residual:.3e})")]
    NotTracePreserving { residual: f64 },

    #[error("invalid channel: {0}")]
    InvalidChannel(String),

    #[error("invalid stochastic matrix: {0}")]
    InvalidStochastic(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("schedule exhausted: requested index {requested}, schedule has {len} channels")]
    ScheduleExhausted { requested: usize, len: usize },

    #[error("singular gauge at site {site}: smallest eigenvalue {min_eig:.3e}")]
    SingularGauge { site: usize, min_eig: f64 },

    #[error("size guard exceeded: {0}")]
    SizeGuard(String),

    #[error("no channel with positive certified Markov-Dobrushin bound in the period")]
    NoContractiveChannel,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid config at {path}: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
