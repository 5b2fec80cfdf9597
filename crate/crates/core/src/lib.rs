//! Calibration of computational models with embedded model error.
//!
//! Model error is represented as a stochastic perturbation of selected model
//! parameters, `Lambda = lambda + delta(alpha, xi)`, written as a polynomial
//! chaos expansion in a germ `xi`. The augmented parameter vector
//! `(lambda, alpha[, log sigma])` is inferred with adaptive Metropolis from
//! approximate likelihoods built on pushed-forward output moments, and
//! predictions split their variance into model error, posterior uncertainty
//! and data noise.
//!
//! Layout:
//! - [`pc`]: bases, quadrature, expansion algebra, Sobol indices
//! - [`embed`]: parameterizations of the stochastic inputs
//! - [`nisp`]: spectral projection of black-box models
//! - [`likelihood`], [`prior`], [`mcmc`]: the inference stage
//! - [`surrogate`]: least-squares Legendre surrogates with LOO errors
//! - [`predict`]: pushed-forward and posterior-predictive moments
//! - [`demos`], [`data`], [`config`], [`workflow`]: the end-to-end driver

pub mod config;
pub mod data;
pub mod demos;
pub mod embed;
pub mod error;
pub mod likelihood;
pub mod mcmc;
pub mod nisp;
pub mod optimize;
pub mod pc;
pub mod predict;
pub mod prior;
pub mod stats;
pub mod surrogate;
pub mod workflow;

pub use error::{Error, Result};
