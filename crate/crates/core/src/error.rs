use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-positive extent on axis {axis}: lower={lower}, upper={upper}")]
    NonPositiveExtent { axis: usize, lower: f64, upper: f64 },

    #[error("axis {axis} needs at least 3 points, got {points}")]
    TooFewPoints { axis: usize, points: usize },

    #[error("query point {point:?} lies outside the grid box")]
    OutOfBox { point: Vec<f64> },

    #[error("probe step escapes the grid box at {point:?}")]
    StepEscapesBox { point: Vec<f64> },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("expression error: {0}")]
    Expression(String),

    #[error("expression `{expr}` is not differentiable at {point:?} along the probe direction")]
    NotDifferentiable { expr: String, point: Vec<f64> },

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("control set is empty")]
    EmptyControlSet,

    #[error("monotonicity violated at node {node}: off-diagonal weight {weight:e} (cross-term magnitude {cross:e})")]
    Monotonicity { node: usize, weight: f64, cross: f64 },

    #[error("discount rate {found} at node {node} is below the declared minimum {rho_min}")]
    RhoMin { node: usize, found: f64, rho_min: f64 },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("kink along a range direction at {point:?} (jump {jump:e}); projected gradient undefined")]
    RangeKink { point: Vec<f64>, jump: f64 },

    #[error("range rank changes inside region: {found} vs {expected} at {point:?}")]
    RankJump { point: Vec<f64>, expected: usize, found: usize },

    #[error("range of sigma is trivial at {point:?}")]
    TrivialRange { point: Vec<f64> },

    #[error("degenerate witness: sigma0^T (p1 - p2) = 0, the kink is invisible to the diffusion")]
    DegenerateWitness,

    #[error("tail tolerance {tail_tol:e} unachievable: exp(-rho_min * t_max) = {achieved:e}")]
    TailTolerance { tail_tol: f64, achieved: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
