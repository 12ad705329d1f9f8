//! Stochastic approximation cut samplers for two-module Bayesian models.

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod grid;
pub mod mcmc;
pub mod model;
pub mod partition;
pub mod proposal;
pub mod rng;
pub mod samc;
pub mod samplers;
pub mod stats;

pub use error::{Error, Result};
