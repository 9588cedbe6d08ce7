//! Multi-label diagnosis-code prediction over clinical notes.
//!
//! The crate covers the whole desk-scale pipeline:
//!
//! - [`tensor`] — dense f64 tensors with a reverse-mode differentiation tape
//!   and a finite-difference gradient checker,
//! - [`text`] — note cleaning (dedup, de-identification, code normalization,
//!   sentence segmentation), tokenization, vocabulary building and encoding,
//! - [`model`] — a Transformer encoder with multi-head self-attention, masked
//!   mean pooling and a sigmoid multi-label head,
//! - [`train`] — binary cross-entropy loss, Adam, the training loop and
//!   bit-exact checkpoints,
//! - [`metrics`] — micro-averaged accuracy/precision/recall reporting,
//! - [`experiments`] — synthetic corpus generation, a bag-of-words baseline,
//!   learning-rate / sample-size / noise sweeps, CSV and SVG emission.
//!
//! Everything is deterministic given a seed: repeated runs produce
//! byte-identical encoded datasets, checkpoints and result tables
//! (wall-clock columns aside), with or without the `parallel` feature.

pub mod error;
pub mod exec;
pub mod experiments;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod text;
pub mod train;

pub use error::{Error, Result};
