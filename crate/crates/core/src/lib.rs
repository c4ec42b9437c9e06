//! Model inversion against black-box deep hashing oracles.
//!
//! The pipeline has two phases. Phase 1 estimates semantic hash centers
//! from the oracle's codes of an auxiliary dataset ([`centers`]) and scores
//! them against ground truth ([`eval`]). Phase 2 inverts each center with a
//! classifier-free guided diffusion sampler ([`diffusion`]) refined by a
//! cluster of differentiable surrogates ([`surrogate`], [`inversion`]).
//!
//! Everything runs on a synthetic world ([`world`]): a Gaussian mixture
//! hashed by a linear sign oracle, where the optimal noise predictor has a
//! closed form.

pub mod centers;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod fsutil;
pub mod hamming;
pub mod harness;
pub mod inversion;
pub mod seeds;
pub mod surrogate;
pub mod world;

pub use error::{Error, Result};
