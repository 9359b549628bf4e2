//! mcflab: a numerical laboratory for mean curvature flow of closed
//! triangulated surfaces in R^l, including flows constrained to curved
//! ambient hypersurfaces, with Gaussian-density, entropy, and monotonicity
//! verification machinery.

pub mod ambient;
pub mod curvature;
pub mod error;
pub mod flow;
pub mod functionals;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod mesh;
pub mod poly;

pub use ambient::{Aabb, AmbientKind, AmbientSpace};
pub use error::{Error, Result};
pub use flow::{FlowConfig, FlowTrajectory, Scheme, Termination};
pub use functionals::{EntropyOptions, EntropyResult, Quadrature, SpacetimePoint};
pub use harness::{
    ClassifyConfig, ExtinctionVerdict, FinalClassification, PiecewiseBudget, PiecewiseFlowLog,
    VerificationReport,
};
pub use mesh::{MeshMetrics, TriMesh, VertexField};
