//! Digital twin of a directly modulated laser link: rate-equation ground
//! truth, randomized stimulus, differentiable surrogate channels and an FIR
//! equalization harness.

pub mod container;
pub mod dataset;
pub mod equalizer;
pub mod error;
pub mod evaluation;
pub mod laser;
pub mod rng;
pub mod stimulus;
pub mod surrogates;
pub mod training;

pub use error::{Error, Result};
