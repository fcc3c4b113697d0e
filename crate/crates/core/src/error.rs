use thiserror::Error;

/// Errors produced by the solvers in this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("operation not supported for the {0} dynamics family")]
    UnsupportedFamily(&'static str),

    #[error("trajectory diverged (non-finite state) at step {step}")]
    DivergedTrajectory { step: usize },

    #[error("matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(&'static str),

    #[error("closed-loop matrix is not Hurwitz (spectral abscissa {abscissa:.3e})")]
    NotHurwitz { abscissa: f64 },

    #[error("singular linear system: {0}")]
    SingularSystem(&'static str),

    #[error("no convergence after {iterations} iterations (last change {last_change:.3e})")]
    NoConvergence { iterations: usize, last_change: f64 },

    #[error("regression matrix is rank deficient: rank {rank}, needed {needed}")]
    RankDeficient { rank: usize, needed: usize },

    #[error("every characteristic curve blew up")]
    AllCharacteristicsBlewUp,

    #[error("Legendre transform is +inf at every probed costate")]
    InfeasibleTransform,

    #[error("a quadrature grid is required: {0}")]
    MissingGrid(&'static str),

    #[error("closed-loop state diverged at t = {time}")]
    Diverged { time: f64 },

    #[error("rank condition not met after {windows} windows")]
    RankStall { windows: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        });
    }
    Ok(())
}
