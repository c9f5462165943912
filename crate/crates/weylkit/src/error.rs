//! Error type shared by all modules.

use thiserror::Error;

/// Library-wide error enum. Variant names follow the failure they signal;
/// the CLI maps every variant to exit code 3 except `Config`.
#[derive(Error, Debug)]
pub enum WkError {
    #[error("matrix is not Hermitian (residual {residual:.3e} > tol {tol:.3e})")]
    NonHermitian { residual: f64, tol: f64 },

    #[error("integrator failure: {0}")]
    IntegratorFailure(String),

    #[error("indeterminate tail mode: Re kappa = {re_kappa:.3e} within +/-{tol:.3e} of zero")]
    IndeterminateMode { re_kappa: f64, tol: f64 },

    #[error("consistency check failed: {0}")]
    ConsistencyError(String),

    #[error("boundary-operator relation {relation} violated (residual {residual:.3e})")]
    RelationViolated { relation: &'static str, residual: f64 },

    #[error("J-unitary extension failed: {0}")]
    ExtensionFailure(String),

    #[error("unsupported endpoint: {0}")]
    UnsupportedEndpoint(String),

    #[error("index regime out of scope: {0}")]
    OutOfScope(String),

    #[error("case mismatch: {0}")]
    CaseMismatch(String),

    #[error("singular boundary matrix (condition estimate {cond:.3e})")]
    SingularBoundaryMatrix { cond: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("ill-posed boundary parameter at lambda = {lambda}: {reason}")]
    IllPosedParameter { lambda: num_complex::Complex64, reason: String },

    #[error("precondition failed: {0}")]
    PreconditionFailed(String),

    #[error("non-monotone distribution increment (eigenvalue {eigenvalue:.3e})")]
    NonMonotone { eigenvalue: f64 },

    #[error("limit did not converge: {0}")]
    NoConvergence(String),

    #[error("q0 is singular at t = {0}")]
    SingularQ0(f64),

    #[error("eigenvalue crossing in q0(t) on the grid")]
    EigenCrossing,

    #[error("unsupported odd-order subclass: {0}")]
    UnsupportedSubclass(String),

    #[error("reduction match failure: {0}")]
    MatchFailure(String),

    #[error("(C0, C1) is not a self-adjoint operator pair: {0}")]
    NotSelfAdjointPair(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("linear algebra backend error: {0}")]
    Linalg(#[from] ndarray_linalg::error::LinalgError),
}

pub type Result<T> = std::result::Result<T, WkError>;
