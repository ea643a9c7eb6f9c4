//! Deterministic solver and experiment harness for finite-horizon nonlinear
//! Markov decision problems.
//!
//! The engine computes exact-in-model policy gradients with a forward
//! marginal recursion and a backward sigma recursion (no sampling), and
//! optimizes state-partitioned tabular policies with an exponentiated
//! Q-ascent update. The `pricing` module instantiates the framework with a
//! QPLEX single-station dynamic-pricing model; `baselines` and `sim` provide
//! exact solvers and a Monte Carlo ground truth for validation.

pub mod backward;
pub mod baselines;
pub mod config;
pub mod enumerate;
pub mod error;
pub mod fisher;
pub mod forward;
pub mod gradcheck;
pub mod harness;
pub mod model;
pub mod pmf;
pub mod poisson;
pub mod policy;
pub mod pricing;
pub mod rng;
pub mod sim;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use pmf::Pmf;
