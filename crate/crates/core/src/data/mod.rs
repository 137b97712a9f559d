//! Data model and file ingestion: knowledge graph, sentence bags, the
//! aligned/unaligned split, co-occurrence counts and initial node embeddings.

use std::path::{Path, PathBuf};

pub mod bags;
pub mod cleaning;
pub mod cooc;
pub mod dataset;
pub mod embeddings;
pub mod kg;
pub mod linking;
pub mod tokens;
pub mod vocab;

pub use bags::{load_bags, parse_bags, write_bags, BagRecord, Sentence, SentenceBag, SentenceRecord};
pub use cleaning::{clean_sentences, CandidateSentence};
pub use cooc::CooccurrenceMatrix;
pub use dataset::{load_pairs, split_aligned, AlignedPair, LabeledPair, MultimodalDataset};
pub use embeddings::InitialEmbeddings;
pub use kg::{load_kg, parse_kg, KnowledgeGraph, Triplet};
pub use linking::{link_entities, Dictionary, EntitySpan};
pub use tokens::{MarkerRole, MarkerToken, TokenTable};
pub use vocab::{LabelVector, RelationLabel, RelationVocab};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{file}:{line}: {message}")]
    Parse { file: String, line: usize, message: String },
    #[error("{file}:{line}: unknown relation `{name}`")]
    UnknownRelation { file: String, line: usize, name: String },
    #[error("vocabulary error: {0}")]
    Vocabulary(String),
    #[error("{file}: bag {bag}, sentence {sentence}: {message}")]
    Validation {
        file: String,
        bag: usize,
        sentence: usize,
        message: String,
    },
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("invalid data: {0}")]
    Invalid(String),
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
