//! Coordinate-sequence object tracking for single-channel thermal-like
//! imagery, built from scratch: a joint-attention encoder, a multilevel
//! progressive fusion pyramid, and a causal decoder that emits quantized
//! bounding-box tokens, plus the training objective, the per-frame tracking
//! runtime, and a synthetic benchmark harness.

// `x % n != 0` reads better than is_multiple_of in shape math.
#![allow(clippy::manual_is_multiple_of)]

pub mod bbox;
pub mod cli;
pub mod config;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod fusion;
pub mod image;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod seqio;
pub mod synth;
pub mod tensor;
pub mod tracker;
pub mod train;
pub mod vocab;

pub use cli::run_cli;
pub use error::{CoreError, Result};
