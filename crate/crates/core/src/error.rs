use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Neither the transmit-side nor the receive-side error covariance of
    /// the hop is proportional to the identity.
    #[error(
        "hop {hop}: the error covariances must satisfy Psi proportional to I or Sigma proportional to I"
    )]
    UnsupportedCovariance { hop: usize },

    #[error(
        "hop {hop}: effective channel has rank {rank}, at least {needed} streams are required"
    )]
    RankDeficient {
        hop: usize,
        rank: usize,
        needed: usize,
    },

    #[error("singular matrix in {0}")]
    Singular(String),

    #[error("largest eigenvalue of Theta is {0}, expected a value below one")]
    EigenvalueOutOfRange(f64),

    #[error("zero diagonal entry at index {0} of the Cholesky factor")]
    ZeroDiagonal(usize),

    #[error("inconsistent forwarding inputs at hop {hop}: xi denominator is {denominator}")]
    InconsistentScaling { hop: usize, denominator: f64 },

    #[error("design failed at step `{step}`: {source}")]
    Step {
        step: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{failed} of {total} trials failed; first failure: {first}")]
    TrialFailures {
        failed: usize,
        total: usize,
        first: String,
    },
}

impl Error {
    pub(crate) fn at_step(self, step: &'static str) -> Error {
        match self {
            e @ Error::Step { .. } => e,
            e => Error::Step {
                step,
                source: Box::new(e),
            },
        }
    }
}
