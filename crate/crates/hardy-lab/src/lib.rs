//! Numerical study of the L^p Hardy inequality on domains with compact
//! boundary.
//!
//! The toolkit estimates the Hardy constant H_p(Ω) of a catalog domain by
//! minimizing the weighted Rayleigh quotient ∫|∇u|^p / ∫|u|^p δ^{-p}, builds
//! positive p-harmonic reference functions G vanishing on ∂Ω, certifies
//! G^α ± G^β sub/supersolution barriers on explicit collar and tail regions,
//! brackets the Hardy constant at infinity, and fits boundary/infinity decay
//! exponents of the computed minimizers against the closed-form predictions.

pub mod barriers;
pub mod config;
pub mod decay;
pub mod geometry;
pub mod grid;
pub mod hardy;
pub mod pharmonic;
pub mod report;
pub mod scalars;

/// Scalar used by the grid and solver stack. The closed-form layer in
/// [`scalars`] is generic over `num_traits::Float`; everything that carries
/// grid data or solver tolerances is pinned to f64.
pub type Real = f64;

/// Exponent pair (p, n) at the working precision.
pub type PExp = scalars::PExponent<Real>;

pub use geometry::{BoundaryPoint, DomainSpec, Region, Shape};
pub use grid::{Grid, GridField, GridMode, NodeKind, QuadScheme, QuadratureRule};
pub use scalars::{AlphaBranch, PExponent};

/// Errors shared across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("{what} out of range: {value} (admissible max {max})")]
    OutOfRange { what: &'static str, value: Real, max: Real },
    #[error("degenerate dimension: p = n = {0} has no exterior exponent")]
    DegenerateDimension(Real),
    #[error("point ({x}, {y}) lies outside the domain")]
    OutsideDomain { x: Real, y: Real },
    #[error("degenerate mask: {0}")]
    DegenerateMask(String),
    #[error("empty region: {0}")]
    EmptyRegion(String),
    #[error("singular integrand at node ({x}, {y}): {detail}")]
    SingularIntegral { x: Real, y: Real, detail: String },
    #[error("zero denominator in Rayleigh quotient")]
    ZeroDenominator,
    #[error("solver failed: {message} (residual history tail: {tail:?})")]
    Solver { message: String, tail: Vec<Real> },
    #[error("mismatched runs: report is {report_id}, fit is {fit_id}")]
    MismatchedRuns { report_id: String, fit_id: String },
    #[error("nonpositive reference G inside region at ({x}, {y}): G = {g}")]
    NonpositiveReference { x: Real, y: Real, g: Real },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
