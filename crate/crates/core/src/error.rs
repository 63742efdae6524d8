use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("linear system is numerically singular (condition estimate {cond:.3e})")]
    SingularSystem { cond: f64 },
    #[error("agent {agent}: mean matrix is not stable (min eigenvalue real part {min_real:.3e})")]
    NotHurwitz { agent: usize, min_real: f64 },
    #[error("observation model is not finitely enumerable")]
    NotEnumerable,
    #[error("round index {0} is invalid (rounds start at 1)")]
    InvalidRound(usize),
    #[error("invalid round range {from}..={to}")]
    InvalidRange { from: usize, to: usize },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("matrix is not stable (min eigenvalue real part {min_real:.3e})")]
    UnstableMatrix { min_real: f64 },
    #[error("Kronecker system is singular (condition estimate {cond:.3e})")]
    SingularKronecker { cond: f64 },
    #[error("iterate diverged at round {round}")]
    Divergence { round: usize },
    #[error("no samples")]
    EmptySamples,
    #[error("probability {0} outside (0, 1)")]
    OutOfRange(f64),
    #[error("covariance is not symmetric (max asymmetry {0:.3e})")]
    InvalidCovariance(f64),
    #[error("power iteration did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("could not draw stable features after {retries} retries")]
    HurwitzFailure { retries: usize },
    #[error("could not draw stable agent systems after {retries} retries")]
    StabilityFailure { retries: usize },
    #[error("rate fit needs strictly positive values, got {0}")]
    NonPositiveValue(f64),
    #[error("need at least {needed} points, got {found}")]
    TooFewPoints { needed: usize, found: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
