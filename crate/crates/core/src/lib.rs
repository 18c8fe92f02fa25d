//! Dimension-robust and geometric MCMC for Bayesian inverse problems posed on
//! function spaces.
//!
//! The unknown is a field expanded in the Karhunen-Loève basis of a Gaussian
//! prior ([`prior`]). Forward models ([`model`]) expose the data misfit, its
//! adjoint gradient, and a Gauss-Newton block. [`geometry`] turns that block
//! into a split position-dependent preconditioner, and [`samplers`] provides
//! pCN, ∞-MALA, ∞-HMC, ∞-mMALA and ∞-mHMC transition kernels. [`diagnostics`]
//! and [`runner`] cover effective sample sizes, summaries and experiment
//! orchestration.

pub mod prior;
pub mod model;
pub mod geometry;
pub mod samplers;
pub mod diagnostics;
pub mod runner;
