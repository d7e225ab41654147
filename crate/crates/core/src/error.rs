use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("degenerate agent: accuracy {accuracy} must lie strictly inside (0, 1)")]
    DegenerateAgent { accuracy: f64 },

    #[error("error correlation undefined: marginal error rate {error_rate} is 0 or 1")]
    UndefinedCorrelation { error_rate: f64 },

    #[error("target error correlation {target} infeasible; achievable interval is [{lo:.6}, {hi:.6}]")]
    InfeasibleCorrelation { target: f64, lo: f64, hi: f64 },

    #[error("bivariate normal quadrature did not reach tolerance {tolerance:e} (estimate {estimate:e})")]
    QuadratureNonConvergence { tolerance: f64, estimate: f64 },

    #[error("correlation correction is unbounded at rho = 1")]
    UnboundedCorrection,

    #[error("optimal weights undefined: d_h^2 + d_m^2 - 2 rho d_h d_m = {denominator}")]
    DegenerateWeights { denominator: f64 },

    #[error("variance bound undefined when d_minus = 0")]
    UndefinedBound,

    #[error("class count {k} must be at least 2")]
    InvalidClassCount { k: usize },

    #[error("empty sample")]
    EmptySample,

    #[error("gain never changes sign over rho in [{lo:.4}, {hi:.4}]; threshold not bracketed")]
    ThresholdNotBracketed { lo: f64, hi: f64 },

    #[error("degenerate stratification: {0}")]
    DegenerateStratification(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
