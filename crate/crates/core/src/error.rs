use thiserror::Error;

/// Failures raised by the geometric, dynamical and solver layers.
///
/// Numeric payloads are reported as `f64` regardless of the scalar type used
/// for the computation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid space: {0}")]
    InvalidSpace(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("generator is not skew for the space's inner product (defect {defect:.3e})")]
    NotSkew { defect: f64 },

    #[error("degenerate rotation: -G^2 is singular (smallest singular value {c1:.3e})")]
    DegenerateRotation { c1: f64 },

    #[error("non-positive distance {0}")]
    NonPositiveDistance(f64),

    #[error("admissibility failure: {condition}")]
    AdmissibilityFailure { condition: String },

    #[error("collision singularity between bodies {i} and {j} (distance {distance:.3e})")]
    CollisionSingularity { i: usize, j: usize, distance: f64 },

    #[error("antipodal or coincident singularity between bodies {i} and {j}")]
    AntipodalOrCoincidentSingularity { i: usize, j: usize },

    #[error("body {body} is off the manifold (defect {defect:.3e})")]
    OffManifold { body: usize, defect: f64 },

    #[error("velocity of body {body} is not tangent (defect {defect:.3e})")]
    NotTangent { body: usize, defect: f64 },

    #[error("singularity encountered at t = {t}: {reason}")]
    SingularityEncountered { t: f64, reason: String },

    #[error("tolerance unachievable: {0}")]
    ToleranceUnachievable(String),

    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("singular jacobian at damping floor")]
    SingularJacobian,

    #[error("gauge conflict: {0}")]
    GaugeConflict(String),

    #[error("branch lost at step {step} (parameter {value}): {reason}")]
    BranchLost { step: usize, value: f64, reason: String },

    #[error("family member {index} does not verify as a relative equilibrium")]
    UnverifiedMember { index: usize },

    #[error("hypothesis not met: {0}")]
    HypothesisNotMet(String),

    #[error("path violation: {0}")]
    PathViolation(String),

    #[error("antipodal guard violated by bodies {i} and {j} (inner product {inner:.6})")]
    AntipodalGuardViolation { i: usize, j: usize, inner: f64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
