//! Ensemble state tracking for linear time-varying systems, built on
//! optimal transport.
//!
//! The crate decomposes into:
//!
//! - [`numerics`]: dense matrices, a fixed-step RK4 integrator, symmetric
//!   eigendecomposition and PSD matrix functions, equality-constrained QP.
//! - [`lti`]: state-transition matrices, controllability/observability
//!   Gramians, minimum-energy control laws and their expected cost under
//!   Gaussian endpoints.
//! - [`measures`]: discrete and Gaussian probability measures, grids,
//!   push-forwards and moment fitting.
//! - [`transport`]: the exact Kantorovich LP on discrete measures
//!   (transportation simplex), p-Wasserstein distances, and the
//!   Gramian-weighted quadratic transport cost.
//! - [`gaussian_tracking`]: closed-form Gaussian displacement interpolation
//!   through a Riccati flow, and two-stage inference of state marginals
//!   from Gaussian output marginals.
//! - [`discrete_tracking`]: grid-discretized tracking as a chained
//!   transport LP under output push-forward constraints.
//! - [`observability`]: ensemble observability certificates for LTI
//!   structural dynamics.
//! - [`ctrl_measure`]: hitting times, reach CDFs and the minimal-time
//!   controllability measure for flow-driven ensembles.

#![allow(clippy::needless_range_loop)]

pub mod ctrl_measure;
pub mod discrete_tracking;
pub mod gaussian_tracking;
pub mod lp;
pub mod lti;
pub mod measures;
pub mod numerics;
pub mod observability;
pub mod transport;

pub use numerics::Matrix;
