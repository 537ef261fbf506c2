use thiserror::Error;

/// Errors raised by the numerical pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("non-finite field evaluation at t={t}, x={x}, y={y}")]
    NonFiniteEvaluation { t: f64, x: f64, y: f64 },
    #[error("period mismatch: field has T={field}, shift has T={shift}")]
    PeriodMismatch { field: f64, shift: f64 },
    #[error("field is not Hamiltonian: p({t}, {x}, {y}) = {value}")]
    NotHamiltonian { t: f64, x: f64, y: f64, value: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("integration exceeded the step budget of {0} steps")]
    StepBudgetExhausted(usize),
    #[error("rotation is undefined for a start point within {eps_origin} of the origin")]
    OriginStart { eps_origin: f64 },
    #[error("domain error: {0}")]
    DomainError(String),
    #[error("no closed level curve around the origin at this resolution; enlarge the region")]
    LevelNotEnclosing,
    #[error("ambiguous level-set topology: {0}")]
    AmbiguousTopology(String),
    #[error("vector at sample {index} vanishes: the displacement has a zero on the curve")]
    ZeroVector { index: usize },
    #[error("angular increment {increment:.3} rad at sample {index} is too large to certify winding")]
    RefineNeeded { index: usize, increment: f64 },
    #[error("trajectory from ({x}, {y}) escaped at t={t_escape} on the curve")]
    BoundaryEscape { x: f64, y: f64, t_escape: f64 },
    #[error("degree report inconsistent: boundary rotation avoids integers but degree is {degree}")]
    InternalInconsistency { degree: i64 },
    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("Jacobian is singular at ({x}, {y})")]
    JacobianSingular { x: f64, y: f64 },
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("curve split failed at depth {depth}: {detail}")]
    SplitFailure { depth: usize, detail: String },
    #[error("invalid curve: {0}")]
    InvalidCurve(String),
}

pub type Result<T> = std::result::Result<T, Error>;
