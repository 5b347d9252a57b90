//! Particle-field simulation of the parabolic-hyperbolic Keller-Segel system
//!
//! ```text
//! rho_t = div(gamma grad rho - chi rho grad c)
//! c_t   = -c rho
//! ```
//!
//! on a cube with zero-flux boundaries. The crate provides reference grid
//! solvers (a radial 1D solver and a 3D finite-difference solver), a
//! stochastic interacting particle-field (SIPF) engine, a classical trilinear
//! interpolator, a CNN-based interpolator with its own training pipeline, and a
//! harness for convergence studies and benchmarks.

pub mod error;
pub mod fdm;
pub mod field;
pub mod harness;
pub mod interp;
pub mod io;
pub mod neural;
pub mod radial;
pub mod rng;
pub mod scenario;
pub mod sipf;

pub use error::{Error, Result};
pub use fdm::{fdm_step, run_fdm, FdmState};
pub use field::{Grid3, ScalarField3, Vec3};
pub use interp::{batch_query, interp_gradient, interp_value, InterpQuery, Interpolator, Trilinear};
pub use radial::{lift_radial_to_3d, radial_step, run_radial, RadialSolution, RadialState};
pub use rng::{RngStream, Stream};
pub use scenario::{builtin, discretize, ConcInit, Quantity, ScenarioSpec, SimParams};
pub use sipf::{bin_particles, run_sipf, run_sipf_with, sample_particles, ParticleEnsemble, SipfOptions, SipfState};
