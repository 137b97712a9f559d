//! Bag-of-sentences text encoder.

pub mod backbone;
pub mod encoder;
pub mod markers;

pub use backbone::{AttentionBackbone, TextBackbone};
pub use encoder::{pool_entity, select_sentences, sentence_input, EncodedSentence, Mode, PooledBag, TextEncoder};
pub use markers::{tokenize_with_markers, EntityMention, MarkedSequence};
