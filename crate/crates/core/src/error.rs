use crate::linalg::LinalgError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("design matrix is rank deficient")]
    SingularDesign,
    #[error("coefficients diverged beyond the separation cap")]
    Separation,
    #[error("outcome has a single class")]
    NoVariation,
    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("jacobian is singular")]
    SingularJacobian,
    #[error("domain error: {0}")]
    DomainError(String),
    #[error("weighted covariate matrix is singular")]
    SingularWeightMatrix,
    #[error("could not bracket the Lagrange multiplier for target fraction {target}")]
    BracketFailure { target: f64 },
    #[error("stratum y={0} has no subjects")]
    EmptyStratum(u8),
    #[error("selected record {id} has zero selection probability")]
    ZeroWeightProbability { id: u64 },
    #[error("efficient information is not positive")]
    SingularInformation,
    #[error("standard error is zero or not finite")]
    DegenerateSe,
}

impl Error {
    /// Stable short name used in reports and CLI messages.
    pub fn name(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "InvalidInput",
            Error::SingularDesign => "SingularDesign",
            Error::Separation => "Separation",
            Error::NoVariation => "NoVariation",
            Error::NonConvergence { .. } => "NonConvergence",
            Error::SingularJacobian => "SingularJacobian",
            Error::DomainError(_) => "DomainError",
            Error::SingularWeightMatrix => "SingularWeightMatrix",
            Error::BracketFailure { .. } => "BracketFailure",
            Error::EmptyStratum(_) => "EmptyStratum",
            Error::ZeroWeightProbability { .. } => "ZeroWeightProbability",
            Error::SingularInformation => "SingularInformation",
            Error::DegenerateSe => "DegenerateSE",
        }
    }

    /// True for failures caused by malformed input rather than numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(self, Error::InvalidInput(_))
    }
}

impl From<LinalgError> for Error {
    fn from(e: LinalgError) -> Self {
        match e {
            LinalgError::Singular => Error::SingularDesign,
            LinalgError::Dimension => Error::InvalidInput("dimension mismatch".into()),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
