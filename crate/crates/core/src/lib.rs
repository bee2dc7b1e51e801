//! Derivative-free Bayesian inversion by filtering a mean-field dynamical
//! system.
//!
//! The parameter is evolved by a covariance-inflating prediction step and
//! conditioned on the augmented observation `[y; r₀]`; the fixed point of this
//! filter is the posterior for linear-Gaussian problems and a Gaussian
//! approximation of it otherwise. Four filters are provided (UKI, EKI, EAKI,
//! ETKI), together with transport-style iterative filters, MCMC reference
//! samplers, benchmark problems and a command-line harness.

pub mod baselines;
pub mod cli;
pub mod error;
pub mod gaussian;
pub mod kalman;
pub mod linalg;
pub mod mcmc;
pub mod meanfield;
pub mod methods;
pub mod problem;
pub mod problems;
pub mod strategies;

pub use error::{Error, Result};
pub use gaussian::{ensemble_moments, gaussian_posterior_linear, Ensemble, GaussianBelief};
pub use meanfield::{build_augmented, inflate, inflate_ensemble, AugmentedSystem};
pub use problem::{Fidelity, FnModel, ForwardModel, InverseProblem, LinearModel};
