//! Density-based topology optimization of thin-walled structures.
//!
//! The crate builds designs whose material concentrates in walls of a
//! prescribed uniform thickness.  A nodal design field is smoothed by a
//! diffusion filter, projected to a near-binary density, and penalized
//! through a maximum-feature-size constraint; compliance is minimized by a
//! separable convex optimizer while the simplicial mesh adapts to the
//! evolving material interface.
//!
//! Modules build on each other bottom-up:
//!
//! * [`mesh`]: adaptive simplicial meshes (bisection forests) and field
//!   transfer between them,
//! * [`projection`]: smoothed Heaviside projections and the feature-size
//!   detector window,
//! * [`filter`]: diffusion smoothing with a physical radius,
//! * [`fem`]: linear elasticity and scalar diffusion assembly plus solvers,
//! * [`objectives`]: compliance, volume, and maximum-feature-size
//!   functionals with design derivatives,
//! * [`optimizer`]: the separable convex update and continuation schedules,
//! * [`driver`]: configuration, built-in problems, logging, and the
//!   optimization loop.

pub mod driver;
pub mod error;
pub mod fem;
pub mod field;
pub mod filter;
pub mod mesh;
pub mod objectives;
pub mod optimizer;
pub mod projection;

pub use driver::{load_config, run, ProblemKind, RunConfig, RunResult, StopReason};
pub use error::{Error, Result};
pub use field::NodalField;
pub use filter::{FeatureSizeSpec, FilterOperator};
pub use mesh::{AdaptConfig, BoundaryTag, DomainBox, ElementIndicator, SimplicialMesh};
