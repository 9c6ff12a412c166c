//! Engagement-intensity regression from video.
//!
//! - [`bors`] turns a variable-length video into fixed-length frame-index sequences by
//!   sliding windows and binary-order representative election.
//! - [`model`] is a class-attention video transformer mapping a frame sequence to `[0, 1]`.
//! - [`training`] holds the loss, Adam, stochastic depth, and the training loop.
//! - [`data`] has the packed video format, manifests, synthetic data, and metrics.
//! - [`numerics`] is the small tensor library and reverse-mode tape underneath.

pub mod bors;
pub mod data;
pub mod model;
pub mod numerics;
pub mod training;
