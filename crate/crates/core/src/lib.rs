//! Synthesis of location traces by privacy-preserving multiple tensor
//! factorization (PPMTF).
//!
//! The pipeline:
//!
//! 1. [`tensor`] builds per-user transition and visit count tensors from a
//!    [`trace::TraceDataset`], trims them and selects observed zeros.
//! 2. [`gibbs`] draws factor matrices from the posterior of a hierarchical
//!    Bayesian tensor factorization model.
//! 3. [`synth`] turns the factors into per-user, per-slot Markov chains via
//!    a Metropolis–Hastings adjustment and samples synthetic traces.
//! 4. [`pd`] gates synthetic traces with a plausible-deniability test.
//!
//! [`sgd`] provides a population-level baseline synthesizer, [`attacks`] and
//! [`metrics`] evaluate privacy and utility, [`dp`] computes differential
//! privacy budgets and [`demo`] generates clustered toy datasets.

pub mod attacks;
pub mod demo;
pub mod dp;
pub mod error;
pub mod gibbs;
pub mod linalg;
pub mod memory;
pub mod metrics;
pub mod pd;
pub mod rng;
pub mod sgd;
pub mod synth;
pub mod tensor;
pub mod trace;

pub use error::{Error, Result};
