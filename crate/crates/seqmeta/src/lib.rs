//! Sequential Bayesian meta-analysis over an ordered literature.
//!
//! Given a sequence of study estimates with standard errors, the library
//! folds each study (or group of estimates from one study) into a posterior
//! over the shared target parameter and records a research trace: the
//! evolving posterior plus each step's learning contribution, measured by
//! the Wasserstein distance between successive posteriors.
//!
//! Three models are supported: fixed-effect, random-effects (known tau,
//! plug-in tau, or fully Bayesian half-normal tau via a grid engine), and a
//! labeled random-effects model in which every methodology carries its own
//! bias term with a time-indexable trust level kappa.

pub mod classical;
pub mod engine;
pub mod error;
pub mod io;
pub mod metrics;
pub mod sim;
pub mod trace;
pub mod types;

pub use error::{Error, Result};
