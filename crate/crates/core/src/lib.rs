//! Phrase-based statistical machine translation at desk scale.
//!
//! The crate covers the whole chain from raw parallel text to scored output:
//! corpus cleaning and lexical augmentation, IBM Model 1 alignment, phrase
//! extraction and scoring, an interpolated n-gram language model, a stack
//! decoder, MERT weight tuning, and BLEU/TER/METEOR evaluation. The
//! [`pipeline`] module chains the stages through plain text files.

pub mod align;
pub mod corpus;
pub mod decoder;
pub mod lexicon;
pub mod lm;
pub mod mert;
pub mod metrics;
pub mod phrase;
pub mod pipeline;
pub mod synth;

pub use corpus::{ParallelCorpus, SentencePair, Side};
pub use decoder::{DecoderConfig, WeightVector};
