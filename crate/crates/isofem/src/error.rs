//! Error type shared across the crate.

use thiserror::Error;

/// Everything that can go wrong in geometry queries, mesh generation,
/// assembly, linear solves and the study harness.
#[derive(Debug, Error)]
pub enum Error {
    /// A point lies outside the tubular neighborhood in which the
    /// orthogonal projection onto the boundary is well defined.
    #[error("point ({0}, {1}) is outside the tubular neighborhood of the boundary")]
    NotInTubularNeighborhood(f64, f64),

    /// An iterative procedure (Newton, CG, ...) did not reach its tolerance.
    #[error("iteration failed to converge: {0}")]
    NoConvergence(String),

    /// An evaluation point is outside the region where an operator is defined.
    #[error("point out of range: {0}")]
    OutOfRange(String),

    /// Input data is invalid or degenerate (zero radius, flipped triangle, ...).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// The structured mesh generator could not satisfy its size/shape targets.
    #[error("mesh generation failed: {0}")]
    MeshGenerationFailed(String),

    /// Curving boundary elements produced an invalid geometry map.
    #[error("mesh curving failed: {0}")]
    CurvingFailed(String),

    /// A reference-coordinate query landed outside the reference triangle.
    #[error("point ({0}, {1}) is not in the requested element")]
    NotInElement(f64, f64),

    /// A point is not covered by any element of the mesh.
    #[error("point ({0}, {1}) is not in the mesh")]
    PointNotInMesh(f64, f64),

    /// No quadrature rule of the requested degree is available.
    #[error("unsupported quadrature degree {0} (supported: 1..=30)")]
    UnsupportedDegree(usize),

    /// The Jacobian of a geometry map is singular or negative.
    #[error("singular or inverted element Jacobian (element {0})")]
    SingularJacobian(usize),

    /// The mesh has no boundary nodes, so Dirichlet elimination is impossible.
    #[error("mesh has no boundary nodes")]
    EmptyBoundary,

    /// CG detected a direction of non-positive curvature.
    #[error("matrix is not positive definite (p^T A p = {0:e} at iteration {1})")]
    IndefiniteMatrix(f64, usize),

    /// An element-level boundary operation was requested on an interior element.
    #[error("element {0} does not touch the mesh boundary")]
    ElementNotOnBoundary(usize),

    /// The moment matrix of the regularized delta is numerically singular.
    #[error("dual-basis moment matrix is ill-conditioned (cond_1 ~ {0:e})")]
    IllConditionedDualBasis(f64),

    /// A special-function argument where the expression is singular.
    #[error("singular argument: {0}")]
    SingularArgument(String),

    /// Near-field quadrature refinement levels failed to agree.
    #[error("near-field quadrature refinements disagree by {0:e}")]
    NearFieldAccuracyLoss(f64),

    /// A quadrature self-check (comparison against a higher-degree rule) failed.
    #[error("quadrature self-check failed: {0}")]
    QuadratureSelfCheckFailed(String),

    /// A field's space hash does not match the space it is evaluated in.
    #[error("field belongs to a different finite element space")]
    SpaceMismatch,

    /// A file to be read has the wrong structure or inconsistent contents.
    #[error("invalid file: {0}")]
    InvalidFile(String),

    /// Study or CLI configuration is invalid.
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
