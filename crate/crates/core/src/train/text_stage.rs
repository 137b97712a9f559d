//! Text pretraining: bag encoder plus scoring head under the text BCE loss.

use rand::seq::{index, SliceRandom};

use crate::data::{DataError, SentenceBag, TokenTable};
use crate::diff::{ParamStore, Real, Tape};
use crate::error::Result;
use crate::text::Mode;

use super::loss::{bce_batch, label_matrix};
use super::model::TextModel;
use super::{check_finite, stage_rng, MetricsLog, ModelState, Stage, StepRecord, Stepper, TrainConfig, TrainingData};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TextTrainStats {
    pub positive_bags: usize,
    pub negatives_per_epoch: usize,
    /// Summed loss over the training examples before and after training.
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Trains the text model on every labelled bag, with bags carrying the
/// absence label drawn as negatives each epoch.
pub fn pretrain_text<T: Real>(data: &TrainingData, config: &TrainConfig, log: &mut MetricsLog) -> Result<(ModelState<T>, TextTrainStats)> {
    config.validate()?;
    let stage = &config.text;
    let mut rng = stage_rng(config.seed, "text");
    let mut tokens = data.tokens.clone();
    tokens.freeze();
    let vocab = data.vocab().clone();
    let mut store: ParamStore<T> = ParamStore::new();
    let model = TextModel::init(&mut store, config, tokens.len(), vocab.k(), &mut rng)?;

    let bags = &data.dataset.bags;
    let (positives, absent): (Vec<usize>, Vec<usize>) = (0..bags.len()).partition(|&i| !bags[i].label.is_na());
    if positives.is_empty() {
        return Err(DataError::Invalid("no training bag carries a relation label".into()).into());
    }
    let wanted = (positives.len() as f64 * config.negatives.ratio).round() as usize;
    if config.negatives.ratio == 0.0 {
        log::warn!("negative ratio 0: the text loss sees positive bags only");
    } else if wanted > absent.len() {
        log::warn!("{wanted} negative bags requested, {} available", absent.len());
    }
    let n_neg = wanted.min(absent.len());
    let per_epoch = positives.len() + n_neg;
    let mut stepper = Stepper::new(stage, per_epoch.div_ceil(stage.batch_size));

    let mut all = positives.clone();
    all.extend(&absent);
    let initial_loss = dataset_loss(&model, &store, &tokens, bags, &all, stage.test_batch_size)?;
    let mut step = 0;
    for epoch in 0..stage.epochs {
        let mut examples = positives.clone();
        let mut picks = index::sample(&mut rng, absent.len(), n_neg).into_vec();
        picks.sort_unstable();
        examples.extend(picks.into_iter().map(|i| absent[i]));
        examples.shuffle(&mut rng);
        for chunk in examples.chunks(stage.batch_size) {
            let lr = stepper.lr()?;
            let tape = Tape::new();
            let batch: Vec<&SentenceBag> = chunk.iter().map(|&i| &bags[i]).collect();
            let p = model.probabilities(&tape, &store, &tokens, &batch, Mode::Train, &mut rng)?;
            let labels: Vec<_> = batch.iter().map(|b| &b.label).collect();
            let r = tape.constant(label_matrix(&labels, vocab.k())?)?;
            let loss = bce_batch(&tape, p, r)?;
            let value = tape.scalar_value(loss).to_f64();
            check_finite(value, step)?;
            let grads = tape.backward(loss)?;
            stepper.push(&mut store, &grads)?;
            log.push(StepRecord {
                stage: "text".into(),
                epoch,
                step,
                loss_text: Some(value),
                loss_graph: None,
                kl_tg: None,
                kl_gt: None,
                loss_best: None,
                loss: value,
                lr,
            });
            step += 1;
        }
        stepper.flush(&mut store)?;
    }
    let final_loss = dataset_loss(&model, &store, &tokens, bags, &all, stage.test_batch_size)?;
    let stats = TextTrainStats {
        positive_bags: positives.len(),
        negatives_per_epoch: n_neg,
        initial_loss,
        final_loss,
    };
    let state = ModelState {
        stage: Stage::Text,
        vocab,
        config: config.clone(),
        store,
        tokens: Some(tokens),
        text: Some(model),
        graph: None,
        shared_relation: None,
        thresholds: Default::default(),
    };
    Ok((state, stats))
}

/// Summed text BCE over `indices` in evaluation mode.
pub(crate) fn dataset_loss<T: Real>(
    model: &TextModel,
    store: &ParamStore<T>,
    tokens: &TokenTable,
    bags: &[SentenceBag],
    indices: &[usize],
    batch_size: usize,
) -> Result<f64> {
    let mut rng = NoRng;
    let mut total = 0.0;
    for chunk in indices.chunks(batch_size.max(1)) {
        let tape = Tape::new();
        let batch: Vec<&SentenceBag> = chunk.iter().map(|&i| &bags[i]).collect();
        let p = model.probabilities(&tape, store, tokens, &batch, Mode::Eval, &mut rng)?;
        let labels: Vec<_> = batch.iter().map(|b| &b.label).collect();
        let k = labels.first().map_or(0, |l| l.len());
        let r = tape.constant(label_matrix(&labels, k)?)?;
        total += tape.scalar_value(bce_batch(&tape, p, r)?).to_f64();
    }
    Ok(total)
}

/// Generator handed to evaluation-mode encoders, which never draw from it.
pub(crate) struct NoRng;

impl rand::RngCore for NoRng {
    fn next_u32(&mut self) -> u32 {
        unreachable!("evaluation mode does not sample")
    }
    fn next_u64(&mut self) -> u64 {
        unreachable!("evaluation mode does not sample")
    }
    fn fill_bytes(&mut self, _: &mut [u8]) {
        unreachable!("evaluation mode does not sample")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::fixture;

    #[test]
    fn zero_epochs_leave_the_loss_unchanged() {
        let f = fixture::tiny();
        let mut c = f.config();
        c.text.epochs = 0;
        let (_, stats) = pretrain_text::<f64>(&f.data, &c, &mut MetricsLog::default()).unwrap();
        assert_eq!(stats.initial_loss, stats.final_loss);
    }

    #[test]
    fn training_lowers_the_loss() {
        let f = fixture::tiny();
        let mut c = f.config();
        c.text.epochs = 30;
        let mut log = MetricsLog::default();
        let (state, stats) = pretrain_text::<f64>(&f.data, &c, &mut log).unwrap();
        assert!(stats.final_loss < stats.initial_loss, "{stats:?}");
        assert!(!log.records.is_empty());
        assert!(state.tokens.as_ref().unwrap().is_frozen());
    }

    #[test]
    fn ratio_zero_draws_no_negatives() {
        let f = fixture::tiny();
        let mut c = f.config();
        c.negatives.ratio = 0.0;
        let (_, stats) = pretrain_text::<f64>(&f.data, &c, &mut MetricsLog::default()).unwrap();
        assert_eq!(stats.negatives_per_epoch, 0);
        let positives = f.data.dataset.bags.iter().filter(|b| !b.label.is_na()).count();
        assert_eq!(stats.positive_bags, positives);
    }

    #[test]
    fn same_seed_same_model() {
        let f = fixture::tiny();
        let c = f.config();
        let (a, _) = pretrain_text::<f64>(&f.data, &c, &mut MetricsLog::default()).unwrap();
        let (b, _) = pretrain_text::<f64>(&f.data, &c, &mut MetricsLog::default()).unwrap();
        for ((_, _, x), (_, _, y)) in a.store.iter().zip(b.store.iter()) {
            assert_eq!(x.data(), y.data());
        }
    }
}
