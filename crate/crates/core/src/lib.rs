//! Streaming decoding engine for encoder-decoder speech recognition models.
//!
//! The engine drives a [`model::StreamingModel`] chunk by chunk, stops
//! decoding when cross-attention reaches the chunk boundary, drops words
//! that an integrate-and-fire detector marks as cut off, and evaluates the
//! result with WER and Differentiable Average Lagging.

pub mod align;
pub mod corpus;
pub mod error;
pub mod metrics;
pub mod model;
pub mod report;
pub mod stream;
pub mod tdm;
pub mod trace;

pub use error::{Error, Result, TraceError};
