//! Entropy-regularized Wasserstein distributionally robust compliance
//! minimization for density-based 2D structures.
//!
//! The crate is organised bottom-up:
//!
//! * [`elasticity`]: bilinear quadrilateral plane-stress elasticity on a
//!   structured mesh, with compliance exposed as a 2×2 quadratic form in the
//!   (constant) boundary load.
//! * [`material`]: SIMP interpolation, penalization continuation and the
//!   density filter.
//! * [`uncertainty`]: the discretized load space, the empirical nominal law
//!   and the Gaussian reference marginals of the entropic coupling.
//! * [`dro`]: the entropic dual objective, its derivatives, the inner
//!   multiplier minimization and the unregularized (hard) variant.
//! * [`optimize`]: the projected-gradient design loop under a volume
//!   equality constraint.
//! * [`oracle`]: brute-force reference computations used to certify the
//!   pieces above.
//! * [`experiment`]: run configuration, sweeps over the ambiguity radius and
//!   artifact emission.

pub mod dro;
pub mod elasticity;
mod error;
pub mod experiment;
pub mod material;
pub mod optimize;
pub mod oracle;
pub mod uncertainty;

pub use dro::{DroMode, DroParams, DualEvaluation, DualProblem, LambdaMinimum};
pub use elasticity::{ComplianceForm, DisplacementField, ElasticModel, IsotropicHooke, Mesh2D};
pub use error::{Error, Result};
pub use experiment::RunConfig;
pub use material::{DensityField, DensityFilter, SimpParams};
pub use optimize::{HistoryRecord, OptimizerConfig};
pub use uncertainty::{Load, LoadSpaceDiscretization, NominalLaw, ReferenceMarginals};
