//! Abbreviation sense disambiguation with topic attention.
//!
//! The crate is a self-contained toolkit: a small reverse-mode autodiff
//! engine ([`numerics`]), text handling and a synthetic benchmark generator
//! ([`text`]), collapsed-Gibbs LDA and convolutional topic vectors
//! ([`topics`]), skip-gram embeddings ([`embeddings`]), a bidirectional LSTM
//! language model for contextual token vectors ([`contextlm`]), TF-IDF
//! baselines ([`baselines`]), the neural classifier ladder including the
//! topic-attention model ([`neural`]), metrics ([`eval`]) and the pipeline
//! commands behind the `senselab` binary ([`pipeline`]).
//!
//! Everything runs in `f64` on the CPU and is deterministic for a fixed seed.

pub mod baselines;
pub mod checkpoint;
pub mod contextlm;
pub mod embeddings;
pub mod error;
pub mod eval;
pub mod neural;
pub mod numerics;
pub mod pipeline;
pub mod rng;
pub mod text;
pub mod topics;

pub use error::{Error, Result};
