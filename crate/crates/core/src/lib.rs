//! Contextual language-model biasing for sequence transcribers.
//!
//! The crate provides backoff n-gram models, emulated end-to-end posteriors,
//! shallow-fusion / density-ratio / contextual density-ratio scorers, a
//! tag-constrained beam search with an exhaustive oracle, alignment-based
//! evaluation (WER, in-tag WER, tag precision/recall) and the experiment
//! pipelines that tie them together.

pub mod corpus;
pub mod decoder;
pub mod edit;
pub mod error;
pub mod harness;
pub mod eval;
pub mod lm;
pub mod names;
pub mod scorers;
pub mod tags;
pub mod vocab;

pub use corpus::{Conversation, Corpus, LoadOptions, ObservationKey, Utterance};
pub use error::{Error, Result, TagError};
pub use lm::{LanguageModel, LmState, NGramLm, Smoothing, TrainConfig};
pub use tags::{extract_spans, strip_tags, Span};
pub use vocab::{TokenId, Vocab};
