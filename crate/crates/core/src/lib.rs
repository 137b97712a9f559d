pub mod ablation;
pub mod data;
pub mod diff;
pub mod error;
pub mod eval;
pub mod graph;
pub mod run;
pub mod scoring;
pub mod synth;
pub mod text;
pub mod train;

pub use ablation::{AblationSpec, AblationTable, Toggle};
pub use data::{KnowledgeGraph, LabelVector, MultimodalDataset, RelationVocab, SentenceBag};
pub use error::{Error, Result};
pub use eval::{EvalReport, Metrics};
pub use run::RunConfig;
pub use scoring::ScorerKind;
pub use train::{Modality, ModelState, TrainConfig, TrainingData, Variant};
