use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid split law: {0}")]
    InvalidLaw(String),

    #[error("split sizes sum to {sum}, expected 1")]
    MassLeak { sum: f64 },

    #[error("expected crumb count {mean_crumb_count} does not exceed 1")]
    SubcriticalLaw { mean_crumb_count: f64 },

    #[error("argument {alpha} is at or below the convergence abscissa {abscissa}")]
    DomainError { alpha: f64, abscissa: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("psi(alpha) = 1 has no root in (0, 1): psi(0) = {psi_at_zero}, psi(1) = {psi_at_one}")]
    NoRoot { psi_at_zero: f64, psi_at_one: f64 },

    #[error("p(alpha) evaluated at the pole alpha* = {alpha_star}")]
    PoleAtAlphaStar { alpha_star: f64 },

    #[error("generation cap {max_gen} reached with crumbs above the size threshold")]
    GenerationCap { max_gen: usize },

    #[error("recursion depth exceeded {cap}")]
    DepthExceeded { cap: usize },

    #[error("alternating sum certified only to relative error {relative_bound:e}")]
    PrecisionInsufficient { relative_bound: f64 },

    #[error("n = {n} exceeds the default cap {cap}; pass an explicit override")]
    SizeCap { n: usize, cap: usize },

    #[error("law has no closed-form Mellin transform at integer arguments")]
    NoClosedForm,

    #[error("integer partition is invalid: {0}")]
    InvalidPartition(String),

    #[error("moment a_{k} is negative or non-finite ({value})")]
    NumericalBlowup { k: usize, value: f64 },

    #[error("identity violated at n = {n}: lhs = {lhs}, rhs = {rhs}")]
    IdentityViolated { n: usize, lhs: f64, rhs: f64 },

    #[error("collection of {len} elements is not of the form k*{d} + 1")]
    BadCardinality { len: usize, d: usize },

    #[error("two-parameter fit failed: {0}")]
    FitFailed(String),

    #[error("power-law fit needs at least 10 points over 2 decades: {0}")]
    InsufficientRange(String),

    #[error("fewer than two chi-squared cells remain after merging")]
    DegenerateCells,

    #[error("{0}")]
    Json(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e.to_string())
    }
}
