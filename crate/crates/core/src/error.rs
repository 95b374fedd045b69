use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite{0}")]
    NotPositiveDefinite(String),
    #[error("degenerate sample: {0}")]
    DegenerateSample(String),
    #[error("{what} did not converge after {iterations} iterations")]
    NoConvergence { what: String, iterations: usize },
    #[error("group covariance matrix is singular (group {group})")]
    SingularV { group: usize },
    #[error("fixed-effect design is rank deficient")]
    RankDeficientX,
    #[error("sensitivity matrix H is singular")]
    SingularH,
    #[error("non-finite finite-difference derivative in coordinate {coordinate}")]
    NonFiniteDerivative { coordinate: usize },
    #[error("prior density is zero at the starting value")]
    PriorUnsupported,
    #[error("bandwidth calibration failed: {0}")]
    CalibrationFailed(String),
    #[error("empirical likelihood Newton iteration failed: {0}")]
    NewtonFailure(String),
    #[error("grid too narrow: {mass:.3e} of posterior mass on boundary cells")]
    GridTooNarrow { mass: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag, used in error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NotPositiveDefinite(_) => "NotPositiveDefinite",
            Error::DegenerateSample(_) => "DegenerateSample",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::SingularV { .. } => "SingularV",
            Error::RankDeficientX => "RankDeficientX",
            Error::SingularH => "SingularH",
            Error::NonFiniteDerivative { .. } => "NonFiniteDerivative",
            Error::PriorUnsupported => "PriorUnsupported",
            Error::CalibrationFailed(_) => "CalibrationFailed",
            Error::NewtonFailure(_) => "NewtonFailure",
            Error::GridTooNarrow { .. } => "GridTooNarrow",
            Error::InvalidInput(_) => "InvalidInput",
            Error::Io(_) => "Io",
            Error::Csv(_) => "Csv",
            Error::Json(_) => "Json",
        }
    }

    /// True for failures of numerical routines (as opposed to bad input or IO).
    pub fn is_numeric(&self) -> bool {
        !matches!(
            self,
            Error::InvalidInput(_) | Error::Io(_) | Error::Csv(_) | Error::Json(_)
        )
    }
}
