//! Exit-problem simulation toolkit for stochastic differential equations.
//!
//! The crate simulates first-exit functionals
//! `S = int_0^tau f(X_t) dt + g(X_tau)` of diffusions
//! `dX = b(X) dt + sigma dW` and cross-validates several estimators of
//! `E[S]` and of its certainty-equivalent (risk-sensitive) counterpart:
//!
//! * plain Monte Carlo ([`estimators::mc_estimate`]),
//! * importance sampling under drift-controlled dynamics with Girsanov
//!   reweighting ([`estimators::is_estimate`]),
//! * control variates built from a martingale integral of a covariate field
//!   ([`estimators::cov_estimate`]), including deliberately perturbed and
//!   deliberately suboptimal covariates,
//! * the per-path risk-sensitive estimator driven by the optimal feedback
//!   control of the exponential cost ([`estimators::risk_sensitive_gamma`]).
//!
//! Supporting modules provide closed-form reference solutions
//! ([`analytic`]), 1-D finite-difference solvers for the linear exit problem,
//! the exit-time moment generating function and the finite-horizon exit
//! probability ([`pde`]), and reproducible counter-keyed trajectory
//! simulation ([`trajectory`]).

pub mod analytic;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod models;
pub mod pde;
pub mod trajectory;

pub use error::{Error, Result};
