//! Dense arithmetic, activations, and seeded randomness.

pub mod activation;
pub(crate) mod kernels;
pub mod matrix;
pub mod rng;

pub use activation::{relu, sigmoid, softmax, tanh_act};
pub use matrix::{Matrix, Vector};
pub use rng::{Rng, Stream};
