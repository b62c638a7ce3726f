//! Desk-scale corrupted audio-visual representation learning.
//!
//! The crate covers the full pipeline: a synthetic paired audio/video
//! corpus with noise banks, frame-level corruption and masking plans, a
//! compact fusion encoder with an EMA teacher, corrupted/masked prediction
//! losses, fine-tuning to a seq2seq recognizer with WER evaluation, and
//! representation-similarity diagnostics.
//!
//! Per-sequence work (generation, corruption, evaluation, embedding) runs
//! through [`exec`], which uses rayon when the `parallel` feature is on and
//! plain iterators otherwise. Results are identical in both modes because
//! every sequence draws from its own keyed RNG stream ([`rng`]).

pub mod ablation;
pub mod analysis;
pub mod config;
pub mod corruption;
pub mod data;
pub mod distillation;
pub mod error;
pub mod exec;
pub mod losses;
pub mod masking;
pub mod model;
pub mod rng;
pub mod tensor_io;
pub mod training;

pub use error::{Error, Result};
