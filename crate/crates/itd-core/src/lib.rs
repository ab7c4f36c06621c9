//! Symbolic list-function induction at desk scale.
//!
//! The pipeline mirrors a self-supervised induction loop: a weak prior
//! sampler proposes candidate list transformations, an exact interpreter
//! deduces input/output pairs from them, a count-based conditional sequence
//! model is fitted on the deduced records, and hypotheses are decoded
//! against observed pairs with ordinary beam search or naive-Bayes group
//! decoding plus a prior re-rank. Every stage is a pure function of its
//! config and seed, so full runs are bit-reproducible.

pub mod config;
pub mod datagen;
pub mod decoder;
pub mod dsl;
pub mod harness;
pub mod oracle;
pub mod par;
pub mod scorer;
pub mod seed;
pub mod trainer;

pub use config::RunConfig;
pub use dsl::{IntList, Observation, Transformation};
pub use scorer::{ContextKey, ScorerTable};
