//! Simulation and concentration tooling for ergodic diffusions.
//!
//! The crate is organised by workload:
//!
//! * [`sde`] models, drift-condition probing and Euler-Maruyama paths.
//! * [`functionals`] scaled additive functionals, burn-in averages and a
//!   Monte Carlo Poisson-potential estimator.
//! * [`bounds`] closed-form exponents, sample sizes and tuning rules.
//! * [`lab`] empirical tails, constant calibration and PAC coverage runs.
//! * [`lasso`] the l1-penalized drift estimator on a radial dictionary.
//! * [`langevin`] heavy-tailed potentials and the unadjusted Langevin chain.
//! * [`cli`] the `ergodic-lab` command line front end.
//!
//! Replicate loops go through [`exec`], which fans out over rayon when the
//! `parallel` feature is enabled and runs in order otherwise. Every random
//! draw comes from a stream keyed by `(seed, replicate_id)`, so results do not
//! depend on the execution policy.

// `!(x > 0.0)` style guards are used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod cli;
pub mod error;
pub mod exec;
pub mod functionals;
pub mod lab;
pub mod langevin;
pub mod lasso;
pub mod output;
pub mod rng;
pub mod sde;

pub use error::{Error, Result};

/// Version string embedded in every emitted artifact.
pub const VERSION: &str = concat!("ergodic-lab ", env!("CARGO_PKG_VERSION"));
