//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes of the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-manifold mesh: {0}")]
    NonManifoldMesh(String),

    #[error("degenerate triangle at face {face}: {detail}")]
    DegenerateTriangle { face: usize, detail: String },

    #[error("field is not normal to the mesh at vertex {vertex} (tangential fraction {tangential_fraction:.3e})")]
    NotNormalField {
        vertex: usize,
        tangential_fraction: f64,
    },

    #[error("perturbed mesh is degenerate: {0}")]
    DegenerateResult(String),

    #[error("point outside the projection tube: {0}")]
    OutsideTube(String),

    #[error("basis is not tangent to the ambient at the given point (defect {0:.3e})")]
    BasisNotTangent(f64),

    #[error("point does not lie on the ambient surface (defect {0:.3e})")]
    NotOnSurface(f64),

    #[error("region does not intersect the ambient surface")]
    EmptyRegion,

    #[error("dilated ambient is not a graph over the tangent plane: {0}")]
    GraphDoesNotExist(String),

    #[error("linear solve failed: {0}")]
    LinearSolveFailure(String),

    #[error("projection onto the ambient failed: {0}")]
    ProjectionFailure(String),

    #[error("triangle quality collapsed below {min_quality:.3e} (floor {floor:.3e})")]
    QualityCollapse { min_quality: f64, floor: f64 },

    #[error("no snapshots in the requested window")]
    EmptyWindow,

    #[error("snapshot at t = {0} is on the trajectory boundary")]
    BoundarySnapshot(f64),

    #[error("kernel scale must be positive, got t0 = {0}")]
    TimeNonPositive(f64),

    #[error("time ordering violated: t = {t} must precede s = {s}")]
    TimeOrder { t: f64, s: f64 },

    #[error("entropy optimizer diverged: {0}")]
    OptimizerDiverged(String),

    #[error("check requires a {expected} ambient, trajectory has {actual}")]
    WrongAmbient {
        expected: &'static str,
        actual: String,
    },

    #[error("trajectory did not terminate by extinction ({0})")]
    NotExtinct(String),

    #[error("meshes in the family do not share connectivity")]
    ConnectivityMismatch,

    #[error("perturbation rejected: entropy drop {achieved:.6} below required {required:.6}")]
    PerturbationRejected { required: f64, achieved: f64 },

    #[error("parse error at {position}: {message}")]
    Parse { position: String, message: String },

    #[error("invalid field `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn parse(position: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            position: position.into(),
            message: message.into(),
        }
    }

    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }
}
