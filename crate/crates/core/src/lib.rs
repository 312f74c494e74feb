//! Inference-time correction of PDE surrogates.
//!
//! Given a semi-linear parabolic problem and a cheap surrogate `û`, the
//! defect `u − û` satisfies a problem of the same form whose data are the
//! surrogate's residual and terminal mismatch. Estimating that defect with a
//! multilevel Picard Monte-Carlo scheme and adding it back to `û` gives the
//! corrected solution.
//!
//! The numerical core is generic over the scalar type ([`Real`]); the
//! aliases below fix it to `f64`, which the harness and CLI use.

pub mod defect;
pub mod error;
pub mod harness;
mod linalg;
pub mod mlp;
pub mod oracle;
pub mod problem;
pub mod real;
pub mod rng;
pub mod scasml;
pub mod surrogate;

pub use error::{Error, Result};
pub use real::Real;
pub use rng::RngStream;

pub type Pde = problem::SemilinearPde<f64>;
pub type Point = problem::SpaceTimePoint<f64>;
pub type Estimate = mlp::Estimate<f64>;
pub type DefectProblem = defect::DefectProblem<f64>;
pub type RbfSurrogate = surrogate::RbfSurrogate<f64>;
pub type DynSurrogate = std::sync::Arc<dyn surrogate::Surrogate<f64>>;

pub type Pde32 = problem::SemilinearPde<f32>;
pub type Point32 = problem::SpaceTimePoint<f32>;
pub type Estimate32 = mlp::Estimate<f32>;
pub type SolveResult = scasml::SolveResult<f64>;
