//! Two-stream video violence classification engine.
//!
//! Per-frame features from a slimmed AlexNet and a SqueezeNet are aggregated
//! over time by separate peephole convolutional LSTMs; the final hidden states
//! are fused and classified into violence / non-violence. Everything runs on
//! hand-written CPU kernels with reverse-mode autodiff, so gradients can be
//! verified against finite differences end to end.

pub mod backbones;
pub mod cli;
pub mod config;
pub mod convlstm;
pub mod error;
pub mod geometry;
pub mod model;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod trainer;
pub mod video;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tape, Tensor};
