//! Datasets, feature transforms, signal synthesis, and checkpoints.

pub mod checkpoint;
mod codec;
pub mod dataset;
pub mod features;
pub mod synth;

pub use codec::write_atomic;
pub use dataset::{Dataset, SignalRecord};
pub use features::{iq_to_amp_phase, prepare, psd_features};
pub use synth::{generate, synthesize, ChannelSpec, GenConfig, Modulation};
