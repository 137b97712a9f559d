//! Co-training of the pretrained text and graph models under a shared
//! relation matrix.

use rand::seq::SliceRandom;

use crate::data::{LabelVector, SentenceBag};
use crate::diff::{ParamId, Real, Tape, Tensor};
use crate::error::{Error, Result};
use crate::text::Mode;

use super::graph_stage::{known_pairs, pair_examples};
use super::loss::{bce_batch, joint_loss, label_matrix};
use super::negatives::{draw, negative_pool};
use super::{check_finite, stage_rng, MetricsLog, ModelState, Stage, StepRecord, Stepper, TrainConfig, TrainingData};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CotrainStats {
    pub aligned_bags: usize,
    pub skipped_bags: usize,
    pub unaligned_pairs: usize,
    pub graph_only_batches: usize,
}

/// Places both models in one store: text parameters keep their handles,
/// graph parameters follow them.
pub fn merge_states<T: Real>(text: &ModelState<T>, graph: &ModelState<T>) -> Result<ModelState<T>> {
    let (text_model, tokens) = text.text_model()?;
    let mut graph_model = graph.graph_model()?.clone();
    if text.vocab != graph.vocab {
        return Err(Error::Config("text and graph models use different relation vocabularies".into()));
    }
    let mut store = text.store.clone();
    let mut map = Vec::with_capacity(graph.store.len());
    for (id, name, value) in graph.store.iter() {
        if store.id(name).is_some() {
            return Err(Error::Config(format!("parameter `{name}` exists in both models")));
        }
        let new = if graph.store.is_trainable(id) {
            store.add(name, value.clone())
        } else {
            store.add_frozen(name, value.clone())
        };
        map.push(new);
    }
    graph_model.remap(|id| map[id.index()]);
    Ok(ModelState {
        stage: Stage::Joint,
        vocab: text.vocab.clone(),
        config: text.config.clone(),
        store,
        tokens: Some(tokens.clone()),
        text: Some(text_model.clone()),
        graph: Some(graph_model),
        shared_relation: None,
        thresholds: Default::default(),
    })
}

/// Adds `r = (r^T + r^G)/2` and points both heads at it.
fn share_relation<T: Real>(state: &mut ModelState<T>) -> Result<ParamId> {
    let (rt, rg) = match (&state.text, &state.graph) {
        (Some(t), Some(g)) => (t.head.relation, g.head.relation),
        _ => return Err(Error::Config("co-training needs both models".into())),
    };
    let (a, b) = (state.store.get(rt), state.store.get(rg));
    if a.shape() != b.shape() {
        return Err(Error::Config(format!("relation matrices differ in shape: {:?} vs {:?}", a.shape(), b.shape())));
    }
    let half = T::lit(0.5);
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| (x + y) * half).collect();
    let shared = state.store.add("joint.relation", Tensor::new(a.shape().to_vec(), data)?);
    if let Some(t) = state.text.as_mut() {
        t.head.relation = shared;
    }
    if let Some(g) = state.graph.as_mut() {
        g.head.relation = shared;
    }
    state.shared_relation = Some(shared);
    Ok(shared)
}

/// Joint training over aligned bags. Every `unaligned_every` bag batches a
/// graph-only batch of unaligned pairs and pool negatives follows. With the
/// `no_joint` ablation the merged pretrained models are returned untouched.
pub fn cotrain<T: Real>(
    data: &TrainingData,
    text: &ModelState<T>,
    graph: &ModelState<T>,
    config: &TrainConfig,
    log: &mut MetricsLog,
) -> Result<(ModelState<T>, CotrainStats)> {
    config.validate()?;
    let mut state = merge_states(text, graph)?;
    state.config = config.clone();
    if config.ablation.no_joint {
        return Ok((state, CotrainStats::default()));
    }
    share_relation(&mut state)?;
    let stage = &config.cotrain;
    let joint = &config.joint;
    let mut rng = stage_rng(config.seed, "cotrain");
    let text_model = state.text.clone().expect("merged");
    let graph_model = state.graph.clone().expect("merged");
    let tokens = state.tokens.clone().expect("merged");
    let rt = graph_model.runtime(&state.vocab)?;
    let ds = &data.dataset;

    let mut stats = CotrainStats::default();
    let mut aligned: Vec<(usize, (usize, usize))> = Vec::new();
    for a in &ds.aligned {
        let bag = &ds.bags[a.bag];
        if bag.label.is_na() && !joint.include_na_aligned {
            continue;
        }
        match (rt.node(&bag.subject), rt.node(&bag.object)) {
            (Some(s), Some(o)) => aligned.push((a.bag, (s, o))),
            _ => {
                log::warn!("bag ({}, {}) has no graph node; skipped", bag.subject, bag.object);
                stats.skipped_bags += 1;
            }
        }
    }
    if aligned.is_empty() {
        return Err(Error::Data(crate::data::DataError::Invalid("no aligned bags to co-train on".into())));
    }
    stats.aligned_bags = aligned.len();

    let unaligned_kg = ds.kg.subgraph(ds.unaligned_triplets.iter().copied());
    let graph_only: Vec<((usize, usize), LabelVector)> = if config.ablation.no_unaligned {
        Vec::new()
    } else {
        pair_examples(&unaligned_kg, &rt)?
    };
    stats.unaligned_pairs = graph_only.len();
    let pool: Vec<(String, String)> = match &data.cooc {
        Some(c) => negative_pool(c, &known_pairs(data), config.negatives.cooc_threshold)
            .into_iter()
            .filter(|(a, b)| rt.node(a).is_some() && rt.node(b).is_some())
            .collect(),
        None => Vec::new(),
    };
    let zero = LabelVector::zeros(state.vocab.k());
    let bag_batches = aligned.len().div_ceil(stage.batch_size);
    let extra = if joint.unaligned_every > 0 && !graph_only.is_empty() {
        bag_batches / joint.unaligned_every
    } else {
        0
    };
    let mut stepper = Stepper::new(stage, bag_batches + extra);
    let lambda = joint.lambda();

    let mut graph_cursor = 0usize;
    let mut graph_order: Vec<usize> = (0..graph_only.len()).collect();
    let mut step = 0;
    for epoch in 0..stage.epochs {
        let mut order = aligned.clone();
        order.shuffle(&mut rng);
        for (b, chunk) in order.chunks(stage.batch_size).enumerate() {
            let lr = stepper.lr()?;
            let tape = Tape::new();
            let bags: Vec<&SentenceBag> = chunk.iter().map(|&(i, _)| &ds.bags[i]).collect();
            let pairs: Vec<(usize, usize)> = chunk.iter().map(|&(_, p)| p).collect();
            let labels: Vec<&LabelVector> = bags.iter().map(|b| &b.label).collect();
            let p_t = text_model.probabilities(&tape, &state.store, &tokens, &bags, Mode::Train, &mut rng)?;
            let p_g = graph_model.probabilities(&tape, &state.store, &rt, &pairs)?;
            let (loss, parts) = joint_loss(&tape, joint.variant, p_t, p_g, &labels, lambda)?;
            check_finite(parts.total, step)?;
            let grads = tape.backward(loss)?;
            stepper.push(&mut state.store, &grads)?;
            log.push(StepRecord {
                stage: "cotrain".into(),
                epoch,
                step,
                loss_text: Some(parts.text),
                loss_graph: Some(parts.graph),
                kl_tg: (joint.variant != super::Variant::Remap).then_some(parts.kl_tg),
                kl_gt: (joint.variant != super::Variant::Remap).then_some(parts.kl_gt),
                loss_best: (joint.variant == super::Variant::RemapB).then_some(parts.best),
                loss: parts.total,
                lr,
            });
            step += 1;

            if extra > 0 && (b + 1) % joint.unaligned_every == 0 {
                let lr = stepper.lr()?;
                let n = stage.batch_size;
                let mut batch: Vec<((usize, usize), &LabelVector)> = Vec::with_capacity(2 * n);
                for _ in 0..n {
                    if graph_cursor == 0 {
                        graph_order.shuffle(&mut rng);
                    }
                    let (p, l) = &graph_only[graph_order[graph_cursor]];
                    batch.push((*p, l));
                    graph_cursor = (graph_cursor + 1) % graph_order.len();
                }
                let n_neg = ((n as f64) * config.negatives.ratio).round() as usize;
                for (a, c) in draw(&pool, n_neg.min(pool.len()), &mut rng) {
                    batch.push(((rt.node(&a).expect("pool node"), rt.node(&c).expect("pool node")), &zero));
                }
                let tape = Tape::new();
                let pairs: Vec<(usize, usize)> = batch.iter().map(|(p, _)| *p).collect();
                let labels: Vec<&LabelVector> = batch.iter().map(|(_, l)| *l).collect();
                let p = graph_model.probabilities(&tape, &state.store, &rt, &pairs)?;
                let r = tape.constant(label_matrix(&labels, zero.len())?)?;
                let loss = bce_batch(&tape, p, r)?;
                let value = tape.scalar_value(loss).to_f64();
                check_finite(value, step)?;
                let grads = tape.backward(loss)?;
                stepper.push(&mut state.store, &grads)?;
                log.push(StepRecord {
                    stage: "cotrain".into(),
                    epoch,
                    step,
                    loss_text: None,
                    loss_graph: Some(value),
                    kl_tg: None,
                    kl_gt: None,
                    loss_best: None,
                    loss: value,
                    lr,
                });
                stats.graph_only_batches += 1;
                step += 1;
            }
        }
        stepper.flush(&mut state.store)?;
    }
    Ok((state, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::loss::{bce_loss, remap_b_loss};
    use crate::train::text_stage::NoRng;
    use crate::train::{fixture, pretrain_graph, pretrain_text, Variant};

    fn pretrained(f: &fixture::Fixture, config: &TrainConfig) -> (ModelState<f64>, ModelState<f64>) {
        let (t, _) = pretrain_text(&f.data, config, &mut MetricsLog::default()).unwrap();
        let (g, _) = pretrain_graph(&f.data, config, &mut MetricsLog::default()).unwrap();
        (t, g)
    }

    #[test]
    fn shared_relation_is_the_mean_of_both() {
        let f = fixture::tiny();
        let c = f.config();
        let (t, g) = pretrained(&f, &c);
        let mut merged = merge_states(&t, &g).unwrap();
        let a = t.store.get(t.text.as_ref().unwrap().head.relation).clone();
        let b = g.store.get(g.graph.as_ref().unwrap().head.relation).clone();
        let shared = share_relation(&mut merged).unwrap();
        let want: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| (x + y) * 0.5).collect();
        assert_eq!(merged.store.get(shared).data(), &want[..]);
        assert_eq!(merged.text.as_ref().unwrap().head.relation, shared);
        assert_eq!(merged.graph.as_ref().unwrap().head.relation, shared);
    }

    #[test]
    fn no_joint_keeps_pretrained_parameters() {
        let f = fixture::tiny();
        let mut c = f.config();
        let (t, g) = pretrained(&f, &c);
        c.ablation.no_joint = true;
        let mut log = MetricsLog::default();
        let (state, _) = cotrain(&f.data, &t, &g, &c, &mut log).unwrap();
        assert!(log.records.is_empty());
        assert!(state.shared_relation.is_none());
        for (_, name, value) in t.store.iter().chain(g.store.iter()) {
            assert_eq!(state.store.get(state.store.id(name).unwrap()).data(), value.data(), "{name}");
        }
    }

    #[test]
    fn zero_weight_variants_log_identical_losses() {
        let f = fixture::tiny();
        let mut c = f.config();
        let (t, g) = pretrained(&f, &c);
        let mut run = |variant, lm: f64, lb: f64| {
            c.joint.variant = variant;
            c.joint.lambda_m = lm;
            c.joint.lambda_b = lb;
            let mut log = MetricsLog::default();
            cotrain(&f.data, &t, &g, &c, &mut log).unwrap();
            log.records.iter().map(|r| r.loss).collect::<Vec<f64>>()
        };
        let plain = run(Variant::Remap, 1.0, 1.0);
        assert!(!plain.is_empty());
        assert_eq!(run(Variant::RemapM, 0.0, 1.0), plain);
        assert_eq!(run(Variant::RemapB, 1.0, 0.0), plain);
        assert_ne!(run(Variant::RemapB, 1.0, 1.0), plain);
    }

    #[test]
    fn first_batch_loss_matches_scalar_oracle() {
        let f = fixture::tiny();
        let mut c = f.config();
        let (t, g) = pretrained(&f, &c);
        c.cotrain.epochs = 1;
        c.cotrain.batch_size = f.data.dataset.aligned.len();
        c.joint.unaligned_every = 0;
        c.joint.variant = Variant::RemapB;
        c.joint.lambda_b = 0.7;
        let mut log = MetricsLog::default();
        cotrain(&f.data, &t, &g, &c, &mut log).unwrap();
        assert_eq!(log.records.len(), 1);

        let mut s = merge_states(&t, &g).unwrap();
        share_relation(&mut s).unwrap();
        let (tm, gm, tokens) = (s.text.clone().unwrap(), s.graph.clone().unwrap(), s.tokens.clone().unwrap());
        let rt = gm.runtime(&s.vocab).unwrap();
        let ds = &f.data.dataset;
        let bags: Vec<&SentenceBag> = ds.aligned.iter().map(|a| &ds.bags[a.bag]).collect();
        assert!(bags.iter().all(|b| b.sentences.len() <= c.model.l_max));
        let pairs: Vec<(usize, usize)> = bags.iter().map(|b| (rt.node(&b.subject).unwrap(), rt.node(&b.object).unwrap())).collect();
        let tape = Tape::new();
        let pt = tm.probabilities(&tape, &s.store, &tokens, &bags, Mode::Eval, &mut NoRng).unwrap();
        let pg = gm.probabilities(&tape, &s.store, &rt, &pairs).unwrap();
        let (pt, pg) = (tape.value(pt).clone(), tape.value(pg).clone());
        let mut want = 0.0;
        for (i, b) in bags.iter().enumerate() {
            let (a, z) = (pt.row(i).to_vec(), pg.row(i).to_vec());
            want += remap_b_loss(bce_loss(&a, &b.label), bce_loss(&z, &b.label), &a, &z, &b.label, 0.7);
        }
        let got = log.records[0].loss;
        assert!((got - want).abs() < 1e-6 * want.abs().max(1.0), "{got} vs {want}");
    }
}
