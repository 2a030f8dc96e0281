//! Desk-scale conditional flow-matching lab.
//!
//! Two ways to get guided samples from a conditional flow model:
//!
//! * train with plain conditional flow matching and apply classifier-free
//!   guidance at inference (two field evaluations per step), or
//! * bake the guidance into the training target (model-guidance flow
//!   matching, with a stop-gradient on the conditional/unconditional
//!   difference) and sample with a single evaluation per step.
//!
//! Everything runs against analytic Gaussian-mixture targets whose exact
//! velocity fields, samplers, and Bayes classifier serve as ground truth,
//! so the guidance-at-half-the-compute tradeoff can be measured end to end
//! on a laptop.
//!
//! See the `examples/` directory for one runnable program per capability
//! and the `gffm` binary for the config-file driven pipeline.

pub mod autodiff;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
mod kernels;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod sampler;
pub mod train;

pub use error::{Error, Result};
