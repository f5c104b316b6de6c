use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadratureError {
    #[error("quadrature degree must be at least 1")]
    DegreeTooLow,
    #[error("no triangle rule tabulated for degree {degree} (max {max}); split the element and use a composite rule")]
    UnsupportedDegree { degree: usize, max: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BasisError {
    #[error("polynomial degree {0} is not supported for solver spaces (need p >= 1)")]
    DegreeTooLow(usize),
    #[error("singular spatial Jacobian (determinant {0:e}); the triangle is degenerate")]
    SingularJacobian(f64),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("grid needs nx, ny >= 1 (got {nx} x {ny})")]
    EmptyGrid { nx: usize, ny: usize },
    #[error("bottom profile b({x1}) = {b} leaves no water column below depth H = {depth}")]
    EmptyWaterColumn { x1: f64, b: f64, depth: f64 },
    #[error("triangle {0} is degenerate (zero or negative area)")]
    DegenerateTriangle(usize),
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error(
        "periodic edge {edge} ({side}) at x2 in [{lo}, {hi}] has no partner on the opposite wall"
    )]
    UnmatchedPeriodicEdge {
        edge: usize,
        side: &'static str,
        lo: f64,
        hi: f64,
    },
    #[error("edge {edge} has {owners} owning triangles")]
    BadAdjacency { edge: usize, owners: usize },
    #[error("boundary edge {0} has no boundary tag")]
    UntaggedBoundaryEdge(usize),
    #[error("mesh file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("mesh invariant violated: {0}")]
    Invariant(String),
    #[error("time step must be positive (got {0})")]
    NonPositiveTimeStep(f64),
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HdgError {
    #[error("element {element}: local block is singular (smallest pivot {pivot:e}); check tau > 0 and quadrature")]
    SingularElement { element: usize, pivot: f64 },
    #[error("stabilization tau must be positive (got {0})")]
    NonPositiveTau(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("slab {slab}: sparse factorization failed ({message})")]
    Factorization { slab: usize, message: String },
    #[error("slab {slab}: iterative solver stalled after {iterations} iterations (relative residual {residual:e})")]
    NotConverged {
        slab: usize,
        iterations: usize,
        residual: f64,
    },
    #[error("dof map collision: facets {first} and {second} share block {block} without a periodic pairing")]
    DofCollision {
        first: usize,
        second: usize,
        block: usize,
    },
    #[error(transparent)]
    Hdg(#[from] HdgError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("invalid march parameters: {0}")]
    Parameters(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProjectionError {
    #[error(transparent)]
    Hdg(#[from] HdgError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("problem `{0}` has no analytic solution; error norms are unavailable")]
    NoAnalyticSolution(String),
    #[error("requested time {t} is outside [0, {t_final}]")]
    TimeOutOfRange { t: f64, t_final: f64 },
    #[error("configuration: {0}")]
    Config(String),
    #[error("level {level}: {source}")]
    Level {
        level: usize,
        #[source]
        source: SolveError,
    },
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
