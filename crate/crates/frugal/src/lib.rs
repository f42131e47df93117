//! Distillation toolkit for embedding-based text-similarity metrics.
//!
//! The crate covers the full pipeline:
//!
//! 1. synthesize paraphrase-like sequence pairs from a text corpus
//!    ([`synth`]) and annotate them with an expensive teacher metric
//!    ([`bertscore`], [`mover`]);
//! 2. train a miniature transformer regressor on the annotated pairs
//!    ([`model`]), optionally fine-tuning on human judgments;
//! 3. measure fidelity, speed, and size of every metric with the
//!    evaluation harness ([`evalbench`]).
//!
//! Everything is deterministic: given the same [`config::RunConfig`] and the
//! same input files, every stage produces byte-identical outputs.

pub mod config;
pub mod error;
pub mod rng;
pub mod types;
pub mod util;

pub mod embed;
pub mod text;

pub mod bertscore;
pub mod mover;
pub mod transport;

pub mod evalbench;
pub mod model;
pub mod synth;

pub use error::{Error, Result};
