//! Graph pretraining: heterogeneous attention encoder plus scoring head
//! under the graph BCE loss.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::{DataError, KnowledgeGraph, LabelVector};
use crate::diff::{init, ParamStore, Real, Tape, Tensor};
use crate::error::Result;

use super::loss::{bce_batch, label_matrix};
use super::model::{GraphModel, GraphRuntime};
use super::negatives::{draw, negative_pool};
use super::{check_finite, stage_rng, MetricsLog, ModelState, Stage, StepRecord, Stepper, TrainConfig, TrainingData};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GraphTrainStats {
    /// Edges the graph side trains on and walks.
    pub triplets: usize,
    /// Labelled (subject, object) pairs drawn from those edges.
    pub pairs: usize,
    pub pool_size: usize,
    pub negatives_per_epoch: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// `walk` plus every other node the model may be asked about.
pub fn build_universe(walk: &KnowledgeGraph, data: &TrainingData) -> KnowledgeGraph {
    let mut u = walk.clone();
    for n in data.dataset.kg.nodes() {
        u.add_node(n);
    }
    if let Some(e) = &data.embeddings {
        for n in e.nodes() {
            u.add_node(n);
        }
    }
    if let Some(c) = &data.cooc {
        for (a, b, _) in c.iter() {
            u.add_node(a);
            u.add_node(b);
        }
    }
    for b in &data.dataset.bags {
        u.add_node(&b.subject);
        u.add_node(&b.object);
    }
    for (s, o) in &data.held_out {
        u.add_node(s);
        u.add_node(o);
    }
    u
}

/// Embedding-file rows in universe order, or uniform random rows when the
/// file is absent or disabled.
pub fn initial_features<T: Real, R: Rng + ?Sized>(universe: &KnowledgeGraph, data: &TrainingData, config: &TrainConfig, rng: &mut R) -> Tensor<T> {
    let n = universe.node_count();
    match (&data.embeddings, config.ablation.no_ehr_init) {
        (Some(e), false) => {
            let rows = e.matrix(universe.nodes().iter().map(String::as_str));
            Tensor::from_f64(&[n, e.dim()], &rows).expect("embedding rows match the node count")
        }
        (None, false) => {
            log::warn!("no initial embeddings supplied; node features are random");
            init::xavier_uniform(rng, &[n, config.model.d_hi], n, config.model.d_hi)
        }
        (_, true) => init::xavier_uniform(rng, &[n, config.model.d_hi], n, config.model.d_hi),
    }
}

/// Pairs that may never be drawn as negatives: every known edge pair, every
/// bag pair and every held-out pair.
pub(crate) fn known_pairs(data: &TrainingData) -> HashSet<(String, String)> {
    let mut known = data.held_out_set();
    for t in data.dataset.kg.edges() {
        known.insert((t.subject.clone(), t.object.clone()));
    }
    for b in &data.dataset.bags {
        known.insert((b.subject.clone(), b.object.clone()));
    }
    known
}

/// Node-index pair examples with their labels.
pub(crate) fn pair_examples(kg: &KnowledgeGraph, rt: &GraphRuntime) -> Result<Vec<((usize, usize), LabelVector)>> {
    kg.pair_labels()
        .into_iter()
        .map(|((s, o), l)| {
            let si = rt.node(&s).ok_or_else(|| DataError::UnknownNode(s.clone()))?;
            let oi = rt.node(&o).ok_or_else(|| DataError::UnknownNode(o.clone()))?;
            Ok(((si, oi), l))
        })
        .collect()
}

pub(crate) fn pool_indices(data: &TrainingData, rt: &GraphRuntime, threshold: u64) -> Vec<(String, String)> {
    match &data.cooc {
        Some(c) => negative_pool(c, &known_pairs(data), threshold)
            .into_iter()
            .filter(|(a, b)| rt.node(a).is_some() && rt.node(b).is_some())
            .collect(),
        None => {
            log::warn!("no co-occurrence matrix supplied; graph training uses no sampled negatives");
            Vec::new()
        }
    }
}

/// Trains the graph model on the labelled pairs of the knowledge graph plus
/// co-occurrence negatives drawn each epoch.
pub fn pretrain_graph<T: Real>(data: &TrainingData, config: &TrainConfig, log: &mut MetricsLog) -> Result<(ModelState<T>, GraphTrainStats)> {
    config.validate()?;
    let stage = &config.graph;
    let mut rng = stage_rng(config.seed, "graph");
    let ds = &data.dataset;
    let walk = if config.ablation.no_unaligned {
        ds.kg.subgraph(ds.aligned_triplets())
    } else {
        ds.kg.clone()
    };
    let universe = build_universe(&walk, data);
    let features: Tensor<T> = initial_features(&universe, data, config, &mut rng);
    let mut store = ParamStore::new();
    let (model, rt) = GraphModel::init(&mut store, config, &universe, features, &mut rng)?;

    let examples = pair_examples(&walk, &rt)?;
    if examples.is_empty() {
        return Err(DataError::Invalid("the knowledge graph has no edges to train on".into()).into());
    }
    let pool = pool_indices(data, &rt, config.negatives.cooc_threshold);
    let labelled = examples.iter().filter(|(_, l)| !l.is_na()).count();
    let wanted = (labelled as f64 * config.negatives.ratio).round() as usize;
    if config.negatives.ratio == 0.0 {
        log::warn!("negative ratio 0: the graph loss sees knowledge-graph pairs only");
    }
    let n_neg = wanted.min(pool.len());
    let zero = LabelVector::zeros(data.vocab().k());
    let per_epoch = examples.len() + n_neg;
    let mut stepper = Stepper::new(stage, per_epoch.div_ceil(stage.batch_size));

    let all: Vec<((usize, usize), &LabelVector)> = examples.iter().map(|(p, l)| (*p, l)).collect();
    let initial_loss = graph_loss(&model, &store, &rt, &all, stage.test_batch_size)?;
    let mut step = 0;
    for epoch in 0..stage.epochs {
        let mut batch_pool: Vec<((usize, usize), &LabelVector)> = all.clone();
        for (a, b) in draw(&pool, n_neg, &mut rng) {
            batch_pool.push(((rt.node(&a).expect("pool node"), rt.node(&b).expect("pool node")), &zero));
        }
        batch_pool.shuffle(&mut rng);
        for chunk in batch_pool.chunks(stage.batch_size) {
            let lr = stepper.lr()?;
            let tape = Tape::new();
            let pairs: Vec<(usize, usize)> = chunk.iter().map(|(p, _)| *p).collect();
            let labels: Vec<&LabelVector> = chunk.iter().map(|(_, l)| *l).collect();
            let p = model.probabilities(&tape, &store, &rt, &pairs)?;
            let r = tape.constant(label_matrix(&labels, zero.len())?)?;
            let loss = bce_batch(&tape, p, r)?;
            let value = tape.scalar_value(loss).to_f64();
            check_finite(value, step)?;
            let grads = tape.backward(loss)?;
            stepper.push(&mut store, &grads)?;
            log.push(StepRecord {
                stage: "graph".into(),
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
            step += 1;
        }
        stepper.flush(&mut store)?;
    }
    let final_loss = graph_loss(&model, &store, &rt, &all, stage.test_batch_size)?;
    let stats = GraphTrainStats {
        triplets: walk.edges().len(),
        pairs: examples.len(),
        pool_size: pool.len(),
        negatives_per_epoch: n_neg,
        initial_loss,
        final_loss,
    };
    let state = ModelState {
        stage: Stage::Graph,
        vocab: data.vocab().clone(),
        config: config.clone(),
        store,
        tokens: None,
        text: None,
        graph: Some(model),
        shared_relation: None,
        thresholds: Default::default(),
    };
    Ok((state, stats))
}

/// Summed graph BCE over labelled pairs, encoding all nodes at once.
pub(crate) fn graph_loss<T: Real>(
    model: &GraphModel,
    store: &ParamStore<T>,
    rt: &GraphRuntime,
    examples: &[((usize, usize), &LabelVector)],
    batch_size: usize,
) -> Result<f64> {
    let tape = Tape::new();
    let nodes: Vec<usize> = (0..rt.kg.node_count()).collect();
    let z = model.encode(&tape, store, rt, &nodes)?.z;
    let mut total = 0.0;
    for chunk in examples.chunks(batch_size.max(1)) {
        let s: std::rc::Rc<[usize]> = chunk.iter().map(|(p, _)| p.0).collect();
        let o: std::rc::Rc<[usize]> = chunk.iter().map(|(p, _)| p.1).collect();
        let p = model.score_rows(&tape, store, z, s, o)?;
        let labels: Vec<&LabelVector> = chunk.iter().map(|(_, l)| *l).collect();
        let r = tape.constant(label_matrix(&labels, labels[0].len())?)?;
        total += tape.scalar_value(bce_batch(&tape, p, r)?).to_f64();
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::fixture;

    #[test]
    fn zero_epochs_leave_the_loss_unchanged() {
        let f = fixture::tiny();
        let mut c = f.config();
        c.graph.epochs = 0;
        let (_, stats) = pretrain_graph::<f64>(&f.data, &c, &mut MetricsLog::default()).unwrap();
        assert_eq!(stats.initial_loss, stats.final_loss);
    }

    #[test]
    fn training_lowers_the_loss() {
        let f = fixture::tiny();
        let mut c = f.config();
        c.graph.epochs = 20;
        let (_, stats) = pretrain_graph::<f64>(&f.data, &c, &mut MetricsLog::default()).unwrap();
        assert!(stats.pool_size > 0);
        assert!(stats.final_loss < stats.initial_loss, "{stats:?}");
    }

    #[test]
    fn no_unaligned_walks_only_aligned_triplets() {
        let f = fixture::tiny();
        let mut c = f.config();
        c.graph.epochs = 1;
        let (_, full) = pretrain_graph::<f64>(&f.data, &c, &mut MetricsLog::default()).unwrap();
        assert_eq!(full.triplets, f.data.dataset.kg.edges().len());
        c.ablation.no_unaligned = true;
        let (_, only) = pretrain_graph::<f64>(&f.data, &c, &mut MetricsLog::default()).unwrap();
        assert_eq!(only.triplets, f.data.dataset.aligned_triplet_count());
        assert!(only.triplets < full.triplets);
    }

    #[test]
    fn initial_features_are_frozen() {
        let f = fixture::tiny();
        let mut c = f.config();
        c.graph.epochs = 1;
        let (state, _) = pretrain_graph::<f64>(&f.data, &c, &mut MetricsLog::default()).unwrap();
        let g = state.graph.as_ref().unwrap();
        assert!(!state.store.is_trainable(g.h_init));
        let universe = build_universe(&f.data.dataset.kg, &f.data);
        let fresh: Tensor<f64> = initial_features(&universe, &f.data, &c, &mut stage_rng(c.seed, "graph"));
        assert_eq!(state.store.get(g.h_init).data(), fresh.data());
    }
}
