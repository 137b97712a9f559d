//! Text and graph models: an encoder plus a scoring head whose parameters
//! live in a shared store.

use std::collections::BTreeMap;
use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{parse_kg, KnowledgeGraph, RelationVocab, SentenceBag, TokenTable};
use crate::diff::{ParamId, ParamStore, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::{Han, HanOutput, MetaPath, NeighborIndex};
use crate::scoring::ScoringHead;
use crate::text::{Mode, TextEncoder};

use super::config::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextModel {
    pub encoder: TextEncoder,
    pub head: ScoringHead,
}

impl TextModel {
    pub fn init<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        config: &TrainConfig,
        vocab_size: usize,
        k: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let m = &config.model;
        let encoder = TextEncoder::init(store, "text.encoder", vocab_size, m.d_hs, config.text_projection(), m.d_l, m.l_max, rng);
        let d = encoder.output_dim(store);
        let head = ScoringHead::init(store, "text.head", m.scorer, d, m.d_r, k, m.transe_gamma, m.transe_literal, rng)?;
        Ok(TextModel { encoder, head })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut v = self.encoder.param_ids();
        v.extend(self.head.param_ids());
        v
    }

    /// `B × K` probabilities for a batch of bags.
    pub fn probabilities<T: Real, R: Rng + ?Sized>(
        &self,
        tape: &Tape<T>,
        store: &ParamStore<T>,
        table: &TokenTable,
        bags: &[&SentenceBag],
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        let (hs, ho) = self.encoder.encode_pairs(tape, store, table, bags, mode, rng)?;
        self.head.probabilities(tape, store, hs, ho)
    }
}

/// Graph encoder state. `nodes` fixes the row order of the frozen initial
/// features; `edges` is the graph the encoder walks, in edge-list form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphModel {
    pub han: Han,
    pub head: ScoringHead,
    pub h_init: ParamId,
    pub nodes: Vec<String>,
    pub edges: String,
    pub metapaths: Vec<MetaPath>,
    pub neighbor_cap: usize,
    pub neighbor_seed: u64,
}

/// Derived structures rebuilt from a [`GraphModel`].
#[derive(Clone, Debug)]
pub struct GraphRuntime {
    pub kg: KnowledgeGraph,
    pub index: NeighborIndex,
}

impl GraphRuntime {
    pub fn node(&self, cui: &str) -> Option<usize> {
        self.kg.node_index(cui)
    }
}

impl GraphModel {
    /// `universe` holds every node the model should know, with the edges the
    /// encoder may walk; `h_init` has one row per universe node.
    pub fn init<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        config: &TrainConfig,
        universe: &KnowledgeGraph,
        h_init: Tensor<T>,
        rng: &mut R,
    ) -> Result<(Self, GraphRuntime)> {
        let m = &config.model;
        if h_init.ndim() != 2 || h_init.rows() != universe.node_count() {
            return Err(Error::Config(format!(
                "initial features {:?} do not cover {} nodes",
                h_init.shape(),
                universe.node_count()
            )));
        }
        let d_hi = h_init.cols();
        let metapaths = m
            .metapaths
            .iter()
            .map(|p| MetaPath::parse(p, universe.vocab()))
            .collect::<Result<Vec<_>>>()?;
        let h_init = store.add_frozen("graph.h_init", h_init);
        let han = Han::init(store, "graph.han", d_hi, m.d_ha, m.d_sem, m.heads, metapaths.len(), m.attention, rng)?;
        let head = ScoringHead::init(store, "graph.head", m.scorer, m.d_ha, m.d_r, universe.vocab().k(), m.transe_gamma, m.transe_literal, rng)?;
        let model = GraphModel {
            han,
            head,
            h_init,
            nodes: universe.nodes().iter().cloned().collect(),
            edges: universe.to_tsv(),
            metapaths,
            neighbor_cap: m.neighbor_cap,
            neighbor_seed: config.seed,
        };
        let runtime = model.runtime(universe.vocab())?;
        Ok((model, runtime))
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut v = self.han.param_ids();
        v.extend(self.head.param_ids());
        v
    }

    pub fn runtime(&self, vocab: &RelationVocab) -> Result<GraphRuntime> {
        let mut kg = KnowledgeGraph::new(vocab.clone());
        for n in &self.nodes {
            kg.add_node(n);
        }
        for t in parse_kg(&self.edges, vocab, "graph model")?.edges() {
            kg.add_edge(t.clone())?;
        }
        if kg.node_count() != self.nodes.len() {
            return Err(Error::Checkpoint("graph edges mention nodes outside the node list".into()));
        }
        let index = NeighborIndex::build(&kg, &self.metapaths, self.neighbor_cap, self.neighbor_seed)?;
        Ok(GraphRuntime { kg, index })
    }

    /// Encodes the given distinct nodes.
    pub fn encode<T: Real>(&self, tape: &Tape<T>, store: &ParamStore<T>, rt: &GraphRuntime, nodes: &[usize]) -> Result<HanOutput> {
        let h = tape.param(store, self.h_init);
        self.han.encode(tape, store, h, &rt.index, nodes)
    }

    /// `B × K` probabilities for node-index pairs, encoding only the nodes involved.
    pub fn probabilities<T: Real>(&self, tape: &Tape<T>, store: &ParamStore<T>, rt: &GraphRuntime, pairs: &[(usize, usize)]) -> Result<Var> {
        let mut local: BTreeMap<usize, usize> = BTreeMap::new();
        for &(s, o) in pairs {
            local.insert(s, 0);
            local.insert(o, 0);
        }
        let nodes: Vec<usize> = local.keys().copied().collect();
        for (i, v) in local.values_mut().enumerate() {
            *v = i;
        }
        let out = self.encode(tape, store, rt, &nodes)?;
        let rows = |f: fn(&(usize, usize)) -> usize| -> Rc<[usize]> { pairs.iter().map(|p| local[&f(p)]).collect() };
        self.score_rows(tape, store, out.z, rows(|p| p.0), rows(|p| p.1))
    }

    /// Scores rows of an already encoded node matrix.
    pub fn score_rows<T: Real>(&self, tape: &Tape<T>, store: &ParamStore<T>, z: Var, subj: Rc<[usize]>, obj: Rc<[usize]>) -> Result<Var> {
        let hs = tape.gather_rows(z, subj)?;
        let ho = tape.gather_rows(z, obj)?;
        self.head.probabilities(tape, store, hs, ho)
    }

    /// Rewrites every parameter handle through `map`.
    pub fn remap(&mut self, map: impl Fn(ParamId) -> ParamId) {
        let h = &mut self.han;
        for id in [&mut h.proj_w, &mut h.proj_b, &mut h.sem_w, &mut h.sem_b, &mut h.sem_q] {
            *id = map(*id);
        }
        for per_head in &mut h.attention {
            for (l, r) in per_head {
                *l = map(*l);
                *r = map(*r);
            }
        }
        remap_head(&mut self.head, &map);
        self.h_init = map(self.h_init);
    }
}

fn remap_head(head: &mut ScoringHead, map: &impl Fn(ParamId) -> ParamId) {
    head.relation = map(head.relation);
    head.kernel = head.kernel.map(map);
    head.linear = head.linear.map(|(w, b)| (map(w), map(b)));
}
