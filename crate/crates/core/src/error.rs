use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("non-finite value {value} at grid index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("fields live on different grids (n = {left} vs n = {right})")]
    GridMismatch { left: usize, right: usize },

    #[error("density positivity violated: rho = {value:e} at grid index {index}")]
    Positivity { index: usize, value: f64 },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("unsupported model parameters: {0}")]
    Unsupported(String),

    #[error("state is off the constraint manifold p*rho = {kappa} (max residual {residual:e})")]
    OffManifold { kappa: f64, residual: f64 },

    #[error("functional `{label}` is not finite at grid index {index} (value {value})")]
    Evaluation { label: String, index: usize, value: f64 },

    #[error("functional `{0}` carries no second partials")]
    MissingHessian(String),

    #[error("quadratic form weight is not positive at grid index {index} (weight {weight:e})")]
    NormDegenerate { index: usize, weight: f64 },

    #[error("Runge-Kutta stage {stage} lost positivity: rho = {value:e} at grid index {index}")]
    StagePositivity { stage: usize, index: usize, value: f64 },

    #[error("solution diverged (non-finite value at grid index {index})")]
    Divergence { index: usize },

    #[error("manifold sampling failed after {attempts} attempts: {reason}")]
    Sampling { attempts: usize, reason: String },

    #[error("at t = {time}: {source}")]
    AtTime { time: f64, source: Box<Error> },

    #[error("configuration error for `{key}`: {message}")]
    Config { key: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag used in error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidGrid(_) => "invalid-grid",
            Error::NonFinite { .. } => "non-finite",
            Error::GridMismatch { .. } => "grid-mismatch",
            Error::Positivity { .. } => "positivity",
            Error::Parameter(_) => "parameter",
            Error::Unsupported(_) => "unsupported-parameters",
            Error::OffManifold { .. } => "off-manifold",
            Error::Evaluation { .. } => "evaluation",
            Error::MissingHessian(_) => "missing-hessian",
            Error::NormDegenerate { .. } => "norm-degenerate",
            Error::StagePositivity { .. } => "stage-positivity",
            Error::Divergence { .. } => "divergence",
            Error::Sampling { .. } => "sampling",
            Error::AtTime { source, .. } => source.kind(),
            Error::Config { .. } => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn at_time(self, time: f64) -> Error {
        match self {
            e @ Error::AtTime { .. } => e,
            e => Error::AtTime { time, source: Box::new(e) },
        }
    }
}
