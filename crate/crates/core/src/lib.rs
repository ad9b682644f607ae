//! Averaged space-time discretizations of the stochastic p-Laplace equation
//! on the unit square.
//!
//! The crate provides the pieces of a convergence laboratory: the flux algebra
//! ([`flux`]), P1 finite elements on nested structured meshes ([`mesh`], [`fem`]),
//! exact joint sampling of standard and averaged Wiener increments with
//! multilevel coarsening ([`noise`]), the Euler-Maruyama and averaged time
//! stepping schemes ([`schemes`]), closed-form references for the linear case
//! ([`exact`]), error distances with Monte Carlo aggregation ([`errors`]) and
//! the experiment driver behind the `splap` binary ([`experiment`]).

pub mod error;
pub mod errors;
pub mod exact;
pub mod experiment;
pub mod fem;
pub mod flux;
pub mod mesh;
pub mod noise;
pub mod schemes;

pub use error::{Error, Result};
