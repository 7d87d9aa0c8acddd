use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid panel: {0}")]
    InvalidPanel(String),

    #[error("panel needs at least two periods after the initial observation, got T = {0}")]
    TooFewPeriods(usize),

    #[error("covariate cross-product matrix is singular")]
    SingularCovariates,

    #[error("lagged dependent variable has no within variation")]
    DegenerateLag,

    #[error("estimate too close to the unit circle for the standard covariance (|rho| = {0})")]
    NearUnitCircle(f64),

    #[error("reparametrization is singular at r = 0")]
    ReparamSingular,

    #[error("invalid hypothesis: {0}")]
    InvalidHypothesis(String),

    #[error("invalid configuration at {pointer}: {message}")]
    InvalidConfig { pointer: String, message: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{0}")]
    Usage(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical(_)
            | Error::SingularCovariates
            | Error::DegenerateLag
            | Error::NearUnitCircle(_)
            | Error::ReparamSingular => 1,
            _ => 2,
        }
    }
}
