//! Private GP-UCB on quadrature Fourier features.
//!
//! The crate approximates a squared-exponential kernel with a finite feature map
//! ([`features`]), runs GP-UCB on (possibly privatized) sufficient statistics
//! ([`posterior`], [`bandit`]) under joint or local joint differential privacy
//! ([`privacy`]), and provides the synthetic environments ([`envs`]), brute-force
//! oracles ([`reference`]) and the experiment harness ([`harness`]) used to study
//! regret as a function of the privacy budget.

pub mod bandit;
pub mod config;
pub mod envs;
pub mod error;
pub mod features;
pub mod harness;
pub mod kernels;
pub mod posterior;
pub mod privacy;
pub mod reference;
pub mod rng;
pub mod svg;

pub use error::{Error, Result};
