//! Relative equilibria of generalized n-body problems in flat space and on
//! spheres and hyperboloids: a solver, a dynamic validator and numerical
//! certification probes.
//!
//! Everything numerical is generic over [`Real`] (`f32` or `f64`); the
//! aliases below fix `f64`.

pub mod certify;
pub mod dynamics;
pub mod equilibria;
pub mod error;
pub mod forcelaw;
pub mod geometry;
pub mod io;
pub mod scalar;

pub use error::{Error, Result};
pub use geometry::{SpaceForm, SpaceKind};
pub use scalar::Real;

pub type ForceLaw64 = forcelaw::ForceLaw<f64>;
pub type RotationGenerator64 = geometry::RotationGenerator<f64>;
pub type Configuration64 = dynamics::Configuration<f64>;
pub type PhaseState64 = dynamics::PhaseState<f64>;
pub type Trajectory64 = dynamics::Trajectory<f64>;
pub type REProblem64 = equilibria::REProblem<f64>;
pub type RESolution64 = equilibria::RESolution<f64>;
pub type ContinuationFamily64 = equilibria::ContinuationFamily<f64>;
