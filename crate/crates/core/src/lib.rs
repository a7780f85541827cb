//! Content-preserving text style transfer at desk scale.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`] — a small reverse-mode autodiff engine (tape + ops), a seeded
//!   RNG, and an Adam optimizer; everything runs in `f64`.
//! * [`data`] — corpus loading, vocabulary construction, sentence framing,
//!   and a deterministic synthetic two-style corpus generator.
//! * [`lexical`] — noun lexicon, pretrained embedding table, and cosine
//!   utilities used for content preservation.
//! * [`model`] — the attentional encoder/decoder with style conditioning,
//!   the soft (temperature-annealed) decoder, a convolutional style
//!   classifier, and a conditional language model.
//! * [`training`] — loss construction, the three training phases, the
//!   temperature schedule, and binary checkpoints.
//! * [`eval`] — style accuracy, BLEU, noun-distance, and perplexity metrics.

pub mod data;
pub mod error;
pub mod eval;
pub mod lexical;
pub mod model;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
