//! Attentional LSTM encoder-decoder written from scratch, plus the machinery
//! to replace a single decoding step's attention and check whether the
//! emitted token survives.
//!
//! The crate is `no_std` with `alloc`. All arithmetic is `f64` through
//! `libm`, so a fixed seed reproduces the same weights on every platform.

#![no_std]

extern crate alloc;

pub mod analysis;
pub mod autodiff;
pub mod corpus;
pub mod error;
pub mod intervention;
pub mod lexicon;
pub mod optim;
pub mod seq2seq;
pub mod tensor;

pub use error::{AnalysisError, CorpusError, ModelError, TensorError};
