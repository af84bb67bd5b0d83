use thiserror::Error;

pub type Result<T> = std::result::Result<T, FlowError>;

/// Errors raised by the solvers and analysis routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    #[error("torus grid needs at least 4 points, got {0}")]
    GridTooSmall(usize),

    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("non-finite value {value} at node {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("singular linear system: {0}")]
    Singular(&'static str),

    #[error("Newton iteration failed at t = {time} after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        time: f64,
        iterations: usize,
        residual: f64,
    },

    #[error("proximal inner solver failed at t = {time} after {iterations} iterations (KKT residual {residual:e})")]
    InnerNonConvergence {
        time: f64,
        iterations: usize,
        residual: f64,
    },

    #[error("invalid facet decomposition: {0}")]
    InvalidDecomposition(String),

    #[error("profile has no facets and no extrema")]
    NoFacets,

    #[error("facet {index} is degenerate (length {length})")]
    DegenerateFacet { index: usize, length: f64 },

    #[error("interval {index} is degenerate (length {length})")]
    DegenerateInterval { index: usize, length: f64 },

    #[error("merge did not reduce the facet count ({before} -> {after})")]
    MergeInconsistency { before: usize, after: usize },
}
