//! Passive voice-liveness detection with microphone arrays.
//!
//! The pipeline: multichannel audio ([`audio_io`]) is transformed into
//! spectrograms ([`dsp`]), reduced to a fixed 102-value feature vector
//! ([`features`]) and scored by a small feed-forward network
//! ([`classifier`]). [`geometry`] covers circular-array analysis and
//! [`synth`] renders labeled multichannel scenes used as a test corpus.

pub mod audio_io;
pub mod classifier;
pub mod dsp;
pub mod error;
pub mod features;
pub mod geometry;
pub mod synth;

pub use error::{Error, Result};
