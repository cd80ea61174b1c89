//! Noise-disentanglement adversarial training for speaker verification.

pub mod config;
pub mod dsp;
pub mod evaluator;
pub mod losses;
pub mod model;
pub mod seeds;
pub mod synth;
pub mod trainer;
