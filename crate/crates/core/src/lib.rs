//! Numerical turnpike analysis for control-affine optimal control problems.
//!
//! The crate builds the Hamiltonian characteristic system of a quadratic-cost
//! optimal control problem, locates its equilibria (steady optima), solves the
//! finite-horizon two-point boundary-value problems by shooting, and measures
//! how long optimal trajectories stay near the steady optimum.
//!
//! Everything numeric is generic over [`Real`]; the `*64` aliases below fix
//! the scalar to `f64`, which is what the CLI and the tests use.

// `!(x > 0.0)` style checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod linham;
pub mod manifolds;
pub mod model;
pub mod odeflow;
pub mod scalar;
pub mod shooting;
pub mod systems;
pub mod turnpike;

pub use scalar::Real;

pub type RiccatiSolution64 = linham::RiccatiSolution<f64>;
pub type LinearTriple64 = linham::LinearTriple<f64>;
pub type Trajectory64 = odeflow::Trajectory<f64>;
pub type OcpProblem64 = model::OcpProblem<f64>;
pub type HamiltonianField64 = model::HamiltonianField<f64>;
pub type SteadyOptimum64 = model::SteadyOptimum<f64>;
pub type BvpSpec64 = shooting::BvpSpec<f64>;
pub type BvpSolution64 = shooting::BvpSolution<f64>;
pub type InvariantManifoldChart64 = manifolds::InvariantManifoldChart<f64>;
pub type TurnpikeCertificate64 = turnpike::TurnpikeCertificate<f64>;
