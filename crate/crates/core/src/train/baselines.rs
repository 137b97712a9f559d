//! Embedding baselines (TransE, DistMult, ComplEx) trained with a margin
//! ranking loss over corrupted objects.

use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{KnowledgeGraph, RelationLabel, Triplet};
use crate::diff::{init, Adam, AdamConfig, DiffError, ParamId, ParamStore, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::eval::{rank_metrics, RankMetrics, RankQuery};
use crate::scoring::{complex_scores, distmult_scores, transe_logits};

use super::negatives::corrupt_negatives;
use super::stage_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Transe,
    Distmult,
    Complex,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KgeConfig {
    pub kind: BaselineKind,
    /// Embedding width; ComplEx splits it into real and imaginary halves.
    pub dim: usize,
    pub margin: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for KgeConfig {
    fn default() -> Self {
        KgeConfig {
            kind: BaselineKind::Transe,
            dim: 32,
            margin: 1.0,
            lr: 0.01,
            epochs: 50,
            batch_size: 128,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KgeModel {
    pub kind: BaselineKind,
    pub entities: ParamId,
    pub relations: ParamId,
}

impl KgeModel {
    pub fn init<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, kind: BaselineKind, n: usize, k: usize, dim: usize, rng: &mut R) -> Result<Self> {
        if kind == BaselineKind::Complex && dim % 2 != 0 {
            return Err(Error::Config(format!("ComplEx needs an even width, got {dim}")));
        }
        let bound = 6.0 / (dim as f64).sqrt();
        Ok(KgeModel {
            kind,
            entities: store.add("kge.entities", init::uniform(rng, &[n, dim], bound)),
            relations: store.add("kge.relations", init::uniform(rng, &[k, dim], bound)),
        })
    }

    /// Raw score of each (subject, relation, object) row; higher is more plausible.
    pub fn scores<T: Real>(&self, tape: &Tape<T>, store: &ParamStore<T>, s: &[usize], k: &[usize], o: &[usize]) -> Result<Var, DiffError> {
        let e = tape.param(store, self.entities);
        let r = tape.param(store, self.relations);
        let hs = tape.gather_rows(e, Rc::from(s))?;
        let ho = tape.gather_rows(e, Rc::from(o))?;
        let all = match self.kind {
            BaselineKind::Transe => transe_logits(tape, hs, ho, r, 0.0, false)?,
            BaselineKind::Distmult => distmult_scores(tape, hs, ho, r)?,
            BaselineKind::Complex => complex_scores(tape, hs, ho, r)?,
        };
        let kk = tape.shape(r)[0];
        let mut mask = vec![0.0; s.len() * kk];
        for (i, &ki) in k.iter().enumerate() {
            mask[i * kk + ki] = 1.0;
        }
        let mask = tape.constant(Tensor::from_f64(&[s.len(), kk], &mask)?)?;
        let ones = tape.constant(Tensor::from_f64(&[kk, 1], &vec![1.0; kk])?)?;
        tape.reshape(tape.matmul(tape.mul(all, mask)?, ones)?, &[s.len()])
    }
}

fn scored(kg: &KnowledgeGraph) -> Vec<(usize, usize, usize)> {
    kg.edges()
        .iter()
        .filter_map(|t| match t.relation {
            RelationLabel::Type(k) => Some((kg.node_index(&t.subject)?, k, kg.node_index(&t.object)?)),
            RelationLabel::Na => None,
        })
        .collect()
}

/// Trains a baseline on the scored edges of `kg`, one corrupted object per edge
/// per epoch. Returns the store, the model and the mean loss of each epoch.
pub fn train_kge<T: Real>(kg: &KnowledgeGraph, config: &KgeConfig) -> Result<(ParamStore<T>, KgeModel, Vec<f64>)> {
    let mut rng = stage_rng(config.seed, "kge");
    let mut store: ParamStore<T> = ParamStore::new();
    let model = KgeModel::init(&mut store, config.kind, kg.node_count(), kg.vocab().k(), config.dim, &mut rng)?;
    let mut edges = scored(kg);
    if edges.is_empty() {
        return Err(Error::Sampling("no scored edges to train on".into()));
    }
    let mut adam = Adam::new(AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    });
    let mut curve = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        edges.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in edges.chunks(config.batch_size.max(1)) {
            let mut neg = Vec::with_capacity(chunk.len());
            for &(s, k, o) in chunk {
                let t = Triplet {
                    subject: kg.node(s).to_string(),
                    relation: RelationLabel::Type(k),
                    object: kg.node(o).to_string(),
                };
                let c = corrupt_negatives(kg, &t, 1, &mut rng)?;
                neg.push(kg.node_index(&c[0].object).expect("corruption is a node"));
            }
            let s: Vec<usize> = chunk.iter().map(|e| e.0).collect();
            let k: Vec<usize> = chunk.iter().map(|e| e.1).collect();
            let o: Vec<usize> = chunk.iter().map(|e| e.2).collect();
            let tape = Tape::new();
            let pos = model.scores(&tape, &store, &s, &k, &o)?;
            let negs = model.scores(&tape, &store, &s, &k, &neg)?;
            let gap = tape.add_scalar(tape.sub(negs, pos)?, config.margin)?;
            let loss = tape.sum(tape.leaky_relu(gap, 0.0)?)?;
            let v = tape.scalar_value(loss).to_f64();
            if !v.is_finite() {
                return Err(Error::Divergence { step: curve.len() });
            }
            total += v;
            let grads = tape.backward(loss)?;
            adam.step(&mut store, &grads, 1.0)?;
        }
        curve.push(total / edges.len() as f64);
    }
    Ok((store, model, curve))
}

/// Filtered object-corruption ranking of `test` edges. Candidates are all
/// nodes other than the subject that do not form a known edge in `known`.
pub fn rank_kge<T: Real>(store: &ParamStore<T>, model: &KgeModel, known: &KnowledgeGraph, test: &[Triplet], ks: &[usize]) -> Result<RankMetrics> {
    let mut queries = Vec::with_capacity(test.len());
    for t in test {
        let RelationLabel::Type(k) = t.relation else {
            continue;
        };
        let s = known.node_index(&t.subject).ok_or_else(|| Error::Lookup(t.subject.clone()))?;
        let o = known.node_index(&t.object).ok_or_else(|| Error::Lookup(t.object.clone()))?;
        let cands: Vec<usize> = (0..known.node_count())
            .filter(|&c| c != s && c != o && !known.has_relation(&t.subject, k, known.node(c)))
            .collect();
        let mut objs = vec![o];
        objs.extend(&cands);
        let tape = Tape::new();
        let v = model.scores(&tape, store, &vec![s; objs.len()], &vec![k; objs.len()], &objs)?;
        queries.push(RankQuery {
            scores: tape.value(v).to_f64_vec(),
            truth: 0,
        });
    }
    rank_metrics(&queries, ks)
}
