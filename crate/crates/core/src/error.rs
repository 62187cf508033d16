use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{op}: position {x} outside [0,1]")]
    Domain { op: &'static str, x: f64 },
    #[error("{op}: x={x} is a branch endpoint")]
    Endpoint { op: &'static str, x: f64 },
    #[error("{op}: y={y} not in the image of branch {branch}")]
    OutOfImage { op: &'static str, branch: usize, y: f64 },
    #[error("{op}: invalid input: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("{op}: unbounded variation: {msg}")]
    UnboundedVariation { op: &'static str, msg: String },
    #[error("{op}: quadrature failed: {msg}")]
    Quadrature { op: &'static str, msg: String },
    #[error("{op}: did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { op: &'static str, iterations: usize, residual: f64 },
    #[error("{op}: cost guard: {msg}")]
    CostGuard { op: &'static str, msg: String },
    #[error("{op}: divergent profile: {msg}")]
    Divergent { op: &'static str, msg: String },
    #[error("{op}: schedule stalled at (j={j}, m={m})")]
    ScheduleStall { op: &'static str, j: usize, m: usize },
}

impl Error {
    pub fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Invalid { op, msg: msg.into() }
    }

    /// True for failures of a numerical certificate rather than of the input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonConvergence { .. } | Error::Divergent { .. } | Error::Quadrature { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
