//! Stochastic linear-quadratic optimal control, solved two ways.
//!
//! The crate pairs a model-based policy-iteration solver (exact generalized
//! Lyapunov solves) with a data-driven policy iteration that learns the same
//! Riccati solution from simulated input/state trajectories, using only the
//! diffusion input matrix `D` and the cost weights — never the drift and
//! state-noise matrices `A`, `B`, `C`. The two solvers cross-validate each
//! other, and a deterministic moment-flow data source lets the data-driven
//! pipeline be checked free of Monte-Carlo error.
//!
//! Modules, roughly bottom-up:
//!
//! - [`matops`]: Kronecker/vectorization operators, the scaled
//!   half-vectorization and quadratic-monomial maps, rank determination.
//! - [`problem`]: plant and cost definitions, mean-square stability tests.
//! - [`oracle`]: model-based policy iteration (the ground truth).
//! - [`sdesim`]: Euler-Maruyama batch simulation and trajectory-integral
//!   accumulation.
//! - [`momentflow`]: exact interval integrals from the closed moment ODEs.
//! - [`datadriven`]: the regression-based policy iteration on collected data.
//! - [`config`] / [`runner`]: experiment configuration, orchestration and
//!   report files for the `slq-pilot` binary.

pub mod config;
pub mod datadriven;
pub mod error;
pub mod matops;
pub mod momentflow;
pub mod oracle;
pub mod problem;
pub mod runner;
pub mod sdesim;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Result, SlqError};
