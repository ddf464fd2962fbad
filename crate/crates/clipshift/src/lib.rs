//! Clipped stochastic gradient methods under decision-dependent data
//! distributions.
//!
//! When the deployed model θ influences the data it will be trained on
//! (z ~ D(θ)), the natural target of SGD-style methods is the performative
//! stable point θ_PS — the fixed point of repeated risk minimization.
//! Clipping the stochastic gradient, as privacy-preserving training does,
//! pulls those methods toward a different point θ_∞ and leaves a
//! non-vanishing bias that grows with the distribution's sensitivity β.
//! This crate implements the machinery to study that effect end to end:
//!
//! * [`optimizers`] — plain SGD, projected clipped SGD with optional
//!   Gaussian privacy noise, and the doubly clipped error-feedback variant
//!   that removes the bias.
//! * [`losses`], [`distributions`] — the loss families and decision-dependent
//!   samplers used by the experiments, with exact expectations on enumerable
//!   supports.
//! * [`oracles`] — closed forms for θ_PS, θ_∞ and the squared bias on the
//!   scalar quadratic family, plus repeated-risk-minimization and
//!   fixed-point solvers for everything else.
//! * [`privacy`] — (ε, δ) noise calibration and the optimal step-size and
//!   clipping-threshold formulas.
//! * [`bounds`] — evaluators for the convergence-bound right-hand sides, so
//!   tests can check that theory dominates measurement.
//! * [`harness`] — seeded, worker-count-invariant Monte-Carlo runs, sweeps,
//!   rate fitting, and CSV/JSON emission.

pub mod bounds;
pub mod distributions;
pub mod error;
pub mod harness;
pub mod losses;
pub mod optimizers;
pub mod oracles;
pub mod privacy;
pub mod rng;
pub mod schedule;
pub mod vector;

pub use error::{Error, Result};
