//! Splitting expectation propagation for Bayesian image reconstruction.
//!
//! Engines (EP-MC, EP-ADMM, EP-MCMC and a baseline full MCMC sampler) share
//! the generic EP machinery in [`epcore`] and are selected by name through
//! the [`engine::Registry`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod clutter;
pub mod config;
pub mod diagnostics;
pub mod engine;
pub mod epadmm;
pub mod epcore;
pub mod epmc;
pub mod epmcmc;
pub mod error;
pub mod field;
pub mod io;
pub mod model;
pub mod phantom;
pub mod rng;

pub use error::{Result, SepError};
