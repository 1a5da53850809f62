//! Replicable hypothesis testing for distributions.
//!
//! A tester is rho-replicable when two runs on independent sample sets,
//! sharing their internal randomness, return the same verdict with
//! probability at least 1 - rho. This crate implements the expectation-gap
//! estimators that achieve this for coin bias, uniformity, closeness, and
//! Gaussian mean testing, plus hypothesis selection built from replicable
//! coin tests, chaining hard-instance generators, and a measurement harness
//! for empirical replicability, accuracy, and sample cost.
//!
//! All randomness flows through explicit seeds: a sample seed drives data
//! generation and a randomness seed drives the testers' internal threshold
//! draws, so the shared-randomness coupling the definition requires is
//! reproducible bit for bit.

pub mod distributions;
pub mod error;
pub mod expectation_gap;
pub mod gaussian;
pub mod harness;
pub mod matching;
pub mod rng;
pub mod selection;
pub mod testers;

pub use error::{Error, Result};
pub use expectation_gap::{Decision, Stage, Tester, TesterVerdict};
