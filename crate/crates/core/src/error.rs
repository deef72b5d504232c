use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("kernel assembly error: {0}")]
    Assembly(String),

    /// Value function iteration hit its iteration cap.
    #[error("value iteration did not converge after {iterations} iterations (last sup-norm gap {gap:e})")]
    Convergence { iterations: usize, gap: f64 },

    #[error("joint problem too large: {states} joint states exceeds cap {cap}")]
    Size { states: usize, cap: usize },

    #[error("panel load error at row {row}: {message}")]
    Load { row: usize, message: String },

    #[error("panel validation error: {0}")]
    Validation(String),

    #[error("neighbor derivation error: {0}")]
    Derivation(String),

    #[error("hessian is not positive definite; eigenvalues {eigenvalues:?}")]
    NotPositiveDefinite { eigenvalues: Vec<f64> },

    #[error("bootstrap error: {0}")]
    Bootstrap(String),

    #[error("nesting violation: restricted NLL {restricted} is below full NLL {full}")]
    Nesting { restricted: f64, full: f64 },

    #[error("division error: {0}")]
    Division(String),

    #[error("simulation error: {0}")]
    Simulation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable tag, used in CLI error documents.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Index(_) => "index",
            Error::Estimation(_) => "estimation",
            Error::Assembly(_) => "assembly",
            Error::Convergence { .. } => "convergence",
            Error::Size { .. } => "size",
            Error::Load { .. } => "load",
            Error::Validation(_) => "validation",
            Error::Derivation(_) => "derivation",
            Error::NotPositiveDefinite { .. } => "not_positive_definite",
            Error::Bootstrap(_) => "bootstrap",
            Error::Nesting { .. } => "nesting",
            Error::Division(_) => "division",
            Error::Simulation(_) => "simulation",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
