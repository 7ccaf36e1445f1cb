//! Decay-rate certificates and numerical verification for kinetic
//! Fokker-Planck (Vlasov-Ornstein-Uhlenbeck) dynamics with separable
//! Hamiltonians.
//!
//! The crate computes the explicit constants entering exponential and
//! algebraic decay bounds for the kinetic Ornstein-Uhlenbeck equation and
//! verifies them at desk scale: a constructive space-time divergence-equation
//! solver audits the Lions inequality, a deterministic phase-space solver
//! audits the entropy decay estimates, and a Langevin integrator cross-checks
//! relaxation rates.

pub mod certificates;
pub mod fit;
pub mod lions;
pub mod model;
pub mod quad;
pub mod sde;
pub mod spectral1d;
pub mod vfp;
