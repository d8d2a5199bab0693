//! Divide-and-conquer single-image super-resolution.
//!
//! The crate contains a small reverse-mode autodiff engine ([`autograd`]),
//! deterministic image operations ([`imaging`]), quality metrics
//! ([`metrics`]), the three-stage network ([`model`]) and its training
//! pipeline ([`training`]).

pub mod autograd;
pub mod error;
pub mod gradcheck;
pub mod imaging;
pub mod metrics;
pub mod model;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{Real, Tensor};
