//! Per-arm kernelized UCB contextual bandits for online, prompt-aware
//! selection among candidate generators.

pub mod environments;
pub mod error;
pub mod estimator;
pub mod kernels;
pub mod linalg;
pub mod metrics;
pub mod policies;
pub mod runner;

pub use error::{Error, Result};
