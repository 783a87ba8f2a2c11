//! Asymptotic theory of covariantly penalized maximum-likelihood estimation in
//! high-dimensional GLMs (Logit and Weibull proportional hazards), with the
//! finite-sample machinery needed to check it by simulation.
//!
//! The crate is `no_std` and needs only `alloc`.

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]
extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod estimator;
pub mod harness;
pub mod kernels;
pub mod population;
pub mod quadrature;
pub mod rs;
pub mod special;

pub use error::{Error, Result};
