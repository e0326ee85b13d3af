use thiserror::Error;

/// Errors raised by constructions and checks in this crate.
///
/// Several variants carry diagnostics (last iterate, violating pair) so a
/// failed hypothesis can be inspected rather than just reported.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("exponent p = {0} is outside the open interval (1, inf)")]
    InvalidExponent(f64),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("space mismatch in {context}: {detail}")]
    SpaceMismatch { context: &'static str, detail: String },

    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    #[error("solver did not converge after {iterations} iterations (optimality gap {gap:.3e})")]
    NonConvergence {
        iterations: usize,
        gap: f64,
        last_iterate: Vec<f64>,
    },

    #[error("operator is zero")]
    ZeroOperator,

    #[error("matrix is numerically singular (smallest singular value {smallest:.3e}, condition {condition:.3e})")]
    Singular { smallest: f64, condition: f64 },

    #[error("linearity certificate failed: additivity defect {defect:.3e}")]
    CertificateFailure { x: Vec<f64>, y: Vec<f64>, defect: f64 },

    #[error("projector mismatch: {0}")]
    ProjectorMismatch(String),

    #[error("not a stable perturbation: {0}")]
    StabilityViolation(String),

    #[error("hypothesis violated: {0}")]
    HypothesisViolation(String),

    #[error("no feasible (lambda1, lambda2) pair with both below 1")]
    NoFeasiblePair,

    #[error("decision routes disagree: {0}")]
    RouteDisagreement(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    /// True for failures of an inner numerical solver, as opposed to
    /// hypothesis or configuration problems.
    pub fn is_solver_failure(&self) -> bool {
        matches!(self, Error::NonConvergence { .. } | Error::NonFinite(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
