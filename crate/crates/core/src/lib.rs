//! lingua-adapt: adapt a byte-fallback BPE tokenizer and a small language
//! model to a new target language.
//!
//! The pipeline: train a target-language BPE vocabulary, diff it against a
//! base vocabulary and append the new tokens at lower merge priority,
//! initialize embedding rows for the new tokens (mean / random /
//! random-token / focus-lite), warm-start and continue pre-training a toy
//! feed-forward LM, and measure fertility, %Gen, throughput, byte-normalized
//! multiple-choice accuracy, BLEU, and forgetting deltas.

pub mod bpe;
pub mod corpus;
pub mod embed;
mod error;
pub mod metrics;
pub mod toylm;
mod util;
pub mod vocab_merge;

pub use error::{Error, Result};
