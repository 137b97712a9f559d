//! Inference for trained models.

use std::collections::HashMap;
use std::rc::Rc;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::SentenceBag;
use crate::diff::{Real, Tape, Tensor};
use crate::error::{Error, Result};
use crate::text::Mode;

use super::model::GraphRuntime;
use super::text_stage::NoRng;
use super::ModelState;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Graph,
    Both,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Text, Modality::Graph, Modality::Both];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Graph => "graph",
            Modality::Both => "both",
        }
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(Modality::Text),
            "graph" => Ok(Modality::Graph),
            "both" => Ok(Modality::Both),
            other => Err(Error::Config(format!("unknown modality `{other}`"))),
        }
    }
}

/// Per-pair probabilities from each modality that could score the pair.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PairScores {
    pub text: Option<Vec<f64>>,
    pub graph: Option<Vec<f64>>,
}

impl PairScores {
    /// The requested view; `Both` is the element-wise maximum and needs both sides.
    pub fn get(&self, modality: Modality) -> Option<Vec<f64>> {
        match modality {
            Modality::Text => self.text.clone(),
            Modality::Graph => self.graph.clone(),
            Modality::Both => match (&self.text, &self.graph) {
                (Some(t), Some(g)) => Some(t.iter().zip(g).map(|(&a, &b)| a.max(b)).collect()),
                _ => None,
            },
        }
    }
}

/// Scores pairs against a model. The graph side encodes every node once.
pub struct Predictor<'a, T> {
    state: &'a ModelState<T>,
    graph: Option<(GraphRuntime, Tensor<T>)>,
}

impl<'a, T: Real> Predictor<'a, T> {
    pub fn new(state: &'a ModelState<T>) -> Result<Self> {
        let graph = match &state.graph {
            Some(g) => {
                let rt = g.runtime(&state.vocab)?;
                let tape = Tape::new();
                let nodes: Vec<usize> = (0..rt.kg.node_count()).collect();
                let z = g.encode(&tape, &state.store, &rt, &nodes)?.z;
                let z = tape.value(z).clone();
                Some((rt, z))
            }
            None => None,
        };
        Ok(Predictor { state, graph })
    }

    /// Scores every pair with each available modality. `bags` maps a pair to
    /// its sentence bag.
    pub fn score_pairs(&self, pairs: &[(String, String)], bags: &HashMap<(String, String), &SentenceBag>) -> Result<Vec<PairScores>> {
        let mut out = vec![PairScores::default(); pairs.len()];
        if let (Some(model), Some(tokens)) = (&self.state.text, &self.state.tokens) {
            let with_bag: Vec<(usize, &SentenceBag)> = pairs.iter().enumerate().filter_map(|(i, p)| bags.get(p).map(|b| (i, *b))).collect();
            for chunk in with_bag.chunks(self.state.config.text.test_batch_size.max(1)) {
                let tape = Tape::new();
                let batch: Vec<&SentenceBag> = chunk.iter().map(|(_, b)| *b).collect();
                let p = model.probabilities(&tape, &self.state.store, tokens, &batch, Mode::Eval, &mut NoRng)?;
                let v = tape.value(p);
                for (r, (i, _)) in chunk.iter().enumerate() {
                    out[*i].text = Some(v.row(r).iter().map(|x| x.to_f64()).collect());
                }
            }
        }
        if let (Some(model), Some((rt, z))) = (&self.state.graph, &self.graph) {
            let known: Vec<(usize, (usize, usize))> = pairs
                .iter()
                .enumerate()
                .filter_map(|(i, (s, o))| Some((i, (rt.node(s)?, rt.node(o)?))))
                .collect();
            for chunk in known.chunks(self.state.config.graph.test_batch_size.max(1)) {
                let tape = Tape::new();
                let zv = tape.constant(z.clone())?;
                let s: Rc<[usize]> = chunk.iter().map(|(_, p)| p.0).collect();
                let o: Rc<[usize]> = chunk.iter().map(|(_, p)| p.1).collect();
                let p = model.score_rows(&tape, &self.state.store, zv, s, o)?;
                let v = tape.value(p);
                for (r, (i, _)) in chunk.iter().enumerate() {
                    out[*i].graph = Some(v.row(r).iter().map(|x| x.to_f64()).collect());
                }
            }
        }
        Ok(out)
    }
}

/// Probabilities for one pair. Text needs `bag`; graph needs both nodes.
pub fn predict<T: Real>(state: &ModelState<T>, subject: &str, object: &str, modality: Modality, bag: Option<&SentenceBag>) -> Result<Vec<f64>> {
    let unavailable = |what: &'static str| Error::Availability(what, subject.to_string(), object.to_string());
    if matches!(modality, Modality::Text | Modality::Both) {
        state.text_model()?;
        if bag.is_none() {
            return Err(unavailable("text"));
        }
    }
    if matches!(modality, Modality::Graph | Modality::Both) {
        state.graph_model()?;
    }
    let pair = (subject.to_string(), object.to_string());
    let mut bags = HashMap::new();
    if let Some(b) = bag {
        bags.insert(pair.clone(), b);
    }
    let scores = Predictor::new(state)?.score_pairs(std::slice::from_ref(&pair), &bags)?;
    let s = &scores[0];
    if matches!(modality, Modality::Text | Modality::Both) && s.text.is_none() {
        return Err(unavailable("text"));
    }
    s.get(modality).ok_or_else(|| unavailable("graph"))
}
