//! Surrogate-assisted uncertainty quantification for expensive vector-valued
//! simulations.
//!
//! The pipeline: sample an uncertain-parameter space with a Sobol sequence
//! ([`design`]), compress training responses with a proper orthogonal
//! decomposition ([`pod`]), regress each retained projection coefficient with
//! a Gaussian process ([`gp`]), and combine the two into a fast time-series
//! emulator ([`surrogate`]). The emulator (or any built-in analytic model from
//! [`models`]) then drives quasi-Monte Carlo uncertainty propagation
//! ([`uqstats`]) and variance-based Sobol sensitivity analysis
//! ([`sensitivity`]). [`validation`] measures surrogate quality by k-fold
//! cross-validation with relative-L² error metrics.
//!
//! All randomized operations take explicit seeds and are bit-reproducible;
//! quasi-Monte Carlo streams are plain (unscrambled) Sobol sequences
//! addressed by a `skip` offset.

pub mod assets;
pub mod design;
pub mod error;
pub mod gp;
pub mod models;
pub mod pod;
pub mod sensitivity;
pub mod surrogate;
pub mod uqstats;
pub mod validation;

pub use error::{Error, Result};
