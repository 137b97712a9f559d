//! Losses, negative sampling, the pretraining stages and co-training.

pub mod baselines;
pub mod config;
mod graph_stage;
mod joint;
pub mod loss;
pub mod model;
pub mod negatives;
mod predict;
mod text_stage;

use std::collections::{BTreeMap, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{CooccurrenceMatrix, InitialEmbeddings, MultimodalDataset, RelationVocab, TokenTable};
use crate::diff::{Adam, Gradients, LrSchedule, ParamId, ParamStore, Real};
use crate::error::{Error, Result};

pub use config::{AblationFlags, JointConfig, ModelConfig, NegativeConfig, SchedulerKind, StageConfig, TrainConfig};
pub use graph_stage::{build_universe, initial_features, pretrain_graph, GraphTrainStats};
pub use joint::{cotrain, merge_states, CotrainStats};
pub use loss::{best_logit, bce_loss, joint_loss, kl_div, remap_b_loss, remap_m_loss, softmax_normalize, LossParts, Variant};
pub use model::{GraphModel, GraphRuntime, TextModel};
pub use negatives::{corrupt_negatives, negative_pool, sample_negatives};
pub use predict::{predict, Modality, PairScores, Predictor};
pub use text_stage::{pretrain_text, TextTrainStats};

/// Everything the stages read besides the configuration.
#[derive(Clone, Debug)]
pub struct TrainingData {
    pub dataset: MultimodalDataset,
    /// Grown over the training bags; frozen once training starts.
    pub tokens: TokenTable,
    pub cooc: Option<CooccurrenceMatrix>,
    pub embeddings: Option<InitialEmbeddings>,
    /// Validation and test pairs: never drawn as negatives, always given a
    /// row in the node feature table.
    pub held_out: Vec<(String, String)>,
}

impl TrainingData {
    pub fn new(dataset: MultimodalDataset, tokens: TokenTable) -> Self {
        TrainingData {
            dataset,
            tokens,
            cooc: None,
            embeddings: None,
            held_out: Vec::new(),
        }
    }

    pub fn vocab(&self) -> &RelationVocab {
        self.dataset.kg.vocab()
    }

    pub(crate) fn held_out_set(&self) -> HashSet<(String, String)> {
        self.held_out.iter().cloned().collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Text,
    Graph,
    Joint,
}

/// A trained model: parameters plus the structure that reads them.
#[derive(Clone, Debug)]
pub struct ModelState<T> {
    pub stage: Stage,
    pub vocab: RelationVocab,
    pub config: TrainConfig,
    pub store: ParamStore<T>,
    pub tokens: Option<TokenTable>,
    pub text: Option<TextModel>,
    pub graph: Option<GraphModel>,
    pub shared_relation: Option<ParamId>,
    /// Decision thresholds per modality name, one per relation type.
    pub thresholds: BTreeMap<String, Vec<f64>>,
}

impl<T: Real> ModelState<T> {
    pub fn text_model(&self) -> Result<(&TextModel, &TokenTable)> {
        match (&self.text, &self.tokens) {
            (Some(m), Some(t)) => Ok((m, t)),
            _ => Err(Error::Availability("text", "model".into(), "has no text encoder".into())),
        }
    }

    pub fn graph_model(&self) -> Result<&GraphModel> {
        self.graph
            .as_ref()
            .ok_or_else(|| Error::Availability("graph", "model".into(), "has no graph encoder".into()))
    }
}

/// One metrics line. Absent terms are omitted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub stage: String,
    pub epoch: usize,
    pub step: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub loss_text: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub loss_graph: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub kl_tg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub kl_gt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub loss_best: Option<f64>,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsLog {
    pub records: Vec<StepRecord>,
}

impl MetricsLog {
    pub fn push(&mut self, r: StepRecord) {
        self.records.push(r);
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r).expect("metrics records serialize"));
            s.push('\n');
        }
        s
    }

    /// Mean loss over the records of one epoch of one stage.
    pub fn epoch_mean(&self, stage: &str, epoch: usize) -> Option<f64> {
        let v: Vec<f64> = self.records.iter().filter(|r| r.stage == stage && r.epoch == epoch).map(|r| r.loss).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Generator for one stage, derived from the run seed and the stage name.
pub fn stage_rng(seed: u64, stage: &str) -> ChaCha8Rng {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in stage.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    ChaCha8Rng::seed_from_u64(seed ^ h)
}

/// Adam with gradient accumulation and a step schedule.
pub(crate) struct Stepper<T> {
    adam: Adam<T>,
    schedule: LrSchedule,
    accum: usize,
    pending: Gradients<T>,
    micro: usize,
    step: usize,
}

impl<T: Real> Stepper<T> {
    pub(crate) fn new(stage: &StageConfig, batches_per_epoch: usize) -> Self {
        let steps_per_epoch = batches_per_epoch.div_ceil(stage.grad_accum).max(1);
        Stepper {
            adam: Adam::new(stage.adam()),
            schedule: stage.schedule(steps_per_epoch * stage.epochs, steps_per_epoch),
            accum: stage.grad_accum,
            pending: Gradients::new(),
            micro: 0,
            step: 0,
        }
    }

    /// Learning rate the next update will use.
    pub(crate) fn lr(&self) -> Result<f64> {
        Ok(self.adam.config.lr * self.schedule.multiplier(self.step)?)
    }

    pub(crate) fn push(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>) -> Result<()> {
        self.pending.accumulate(grads);
        self.micro += 1;
        if self.micro == self.accum {
            self.apply(store)?;
        }
        Ok(())
    }

    /// Applies any partially accumulated update.
    pub(crate) fn flush(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        if self.micro > 0 {
            self.apply(store)?;
        }
        Ok(())
    }

    fn apply(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        let m = self.schedule.multiplier(self.step)?;
        self.adam.step(store, &self.pending, m)?;
        self.pending.clear();
        self.micro = 0;
        self.step += 1;
        Ok(())
    }
}

/// Fails with the step index when a loss is not finite.
pub(crate) fn check_finite(loss: f64, step: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence { step })
    }
}
