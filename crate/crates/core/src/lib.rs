//! LSTM denoising auto-encoder classifier for radio signals.
//!
//! The model encodes a sequence of per-sample features with a stacked LSTM,
//! reconstructs the clean input from every hidden state, and classifies
//! from the final hidden state. Everything here is implemented from first
//! principles in f64: dense layers, LSTM with backpropagation through time,
//! Adam, gradient checking, signal synthesis, file formats and reporting.

pub mod bench;
pub mod checks;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod layers;
pub mod lstm;
pub mod model;
pub mod numeric;
pub mod optim;
pub mod render;
pub mod train;

pub use error::{Error, Result};
