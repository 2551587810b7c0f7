use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("non-finite value {value} in {context}")]
    NonFinite { context: String, value: f64 },

    #[error("exponent {value} not admissible: {reason}")]
    BadExponent { value: f64, reason: String },

    #[error("grid mismatch: {0}")]
    SpecMismatch(String),

    #[error("function has an empty effective domain")]
    EmptyDomain,

    #[error("point {x} lies outside the effective domain")]
    OutOfDomain { x: f64 },

    #[error("precondition violated: {what} (distance {distance:e})")]
    PreconditionViolated { what: String, distance: f64 },

    #[error("rate function does not dominate: {0}")]
    NotDominated(String),

    #[error("knot grids differ: {0}")]
    DomainMismatch(String),

    #[error("input is not a unit vector (norm {norm})")]
    NotUnit { norm: f64 },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("{what} not converged: {detail}")]
    NotConverged { what: String, detail: String },

    #[error("optimizer did not converge after {iterations} iterations")]
    DidNotConverge { iterations: usize },

    #[error("bad input: {0}")]
    BadInput(String),

    #[error("no sign change on [{lo}, {hi}]")]
    RootBracketFailure { lo: f64, hi: f64 },

    #[error("unstable step at t = {t}: {detail}")]
    StabilityViolation { t: f64, detail: String },

    #[error("clipped mass {clipped:e} exceeds limit {limit:e}")]
    NegativityClipExceeded { clipped: f64, limit: f64 },

    #[error("deficit rose by {increase:e} between t = {t0} and t = {t1} (budget {budget:e})")]
    MonotonicityViolation {
        t0: f64,
        t1: f64,
        increase: f64,
        budget: f64,
    },

    #[error("invalid table: {0}")]
    InvalidTable(String),

    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn ensure_finite(context: &str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite {
            context: context.to_string(),
            value,
        })
    }
}
