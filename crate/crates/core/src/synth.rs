//! Seeded synthetic worlds with planted TuckER structure.
//!
//! Entities carry Gaussian embeddings whose last coordinate is fixed at 1, so
//! the core tensor can hold a per-relation bias. The bias is set a fixed
//! number of standard deviations below zero, which leaves most pairs scoring
//! low under every relation type. The core tensor is then rescaled so that the
//! top `density` share of (subject, type, object) scores reach `p_hi`.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{BagRecord, CooccurrenceMatrix, KnowledgeGraph, LabelVector, RelationLabel, RelationVocab, SentenceRecord, Triplet};
use crate::error::{Error, Result};
use crate::train::stage_rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldParams {
    pub n_entities: usize,
    pub relation_types: usize,
    pub dim: usize,
    /// Cap on emitted edges as a share of all ordered pairs times types.
    pub density: f64,
    pub p_hi: f64,
    pub p_lo: f64,
    /// Per-relation bias in standard deviations of the unbiased scores.
    pub bias: f64,
    /// Standard deviation of the latent features.
    pub feature_scale: f64,
    pub seed: u64,
}

impl Default for WorldParams {
    fn default() -> Self {
        WorldParams {
            n_entities: 200,
            relation_types: 3,
            dim: 16,
            density: 0.0125,
            p_hi: 0.9,
            p_lo: 0.1,
            bias: 2.0,
            feature_scale: 1.0,
            seed: 7,
        }
    }
}

impl WorldParams {
    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_entities < 4 {
            return bad(format!("n_entities must be at least 4, got {}", self.n_entities));
        }
        if !(self.density > 0.0 && self.density < 1.0) {
            return bad(format!("density must lie in (0, 1), got {}", self.density));
        }
        if !(0.0 < self.p_lo && self.p_lo < self.p_hi && self.p_hi < 1.0) {
            return bad(format!("need 0 < p_lo < p_hi < 1, got p_lo={} p_hi={}", self.p_lo, self.p_hi));
        }
        if self.dim < 2 || self.relation_types == 0 || self.relation_types > self.dim {
            return bad(format!("need 1 <= relation_types <= dim and dim >= 2, got {} and {}", self.relation_types, self.dim));
        }
        if !self.bias.is_finite() || self.bias < 0.0 {
            return bad(format!("bias must be finite and non-negative, got {}", self.bias));
        }
        if !(self.feature_scale > 0.0 && self.feature_scale.is_finite()) {
            return bad(format!("feature_scale must be positive, got {}", self.feature_scale));
        }
        Ok(())
    }
}

/// Ground truth plus the knowledge graph it implies.
#[derive(Clone, Debug)]
pub struct PlantedWorld {
    pub params: WorldParams,
    pub vocab: RelationVocab,
    pub entities: Vec<String>,
    /// `n × d` latent features, row-major; the last column is 0.
    pub features: Vec<f64>,
    /// `n × d`: the sigmoid of `features`, with the last coordinate fixed at 1.
    pub e: Vec<f64>,
    /// `K × d`.
    pub r: Vec<f64>,
    /// `d × d × d`, indexed `[subject, relation, object]`.
    pub w: Vec<f64>,
    /// Every planted edge, ordered by subject, object, type.
    pub kg: KnowledgeGraph,
    /// Unordered pairs scoring at most `p_lo` under every type in both
    /// orientations, as `(lower index, higher index)`.
    pub negative_pool: Vec<(String, String)>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Relation names for `k` types: the standard three, then `R3`, `R4`, ...
pub fn relation_vocab(k: usize) -> Result<RelationVocab> {
    if k == 3 {
        return Ok(RelationVocab::default());
    }
    let names = (0..k).map(|i| format!("R{i}")).collect();
    Ok(RelationVocab::new(names, "NA")?)
}

pub fn entity_id(i: usize) -> String {
    format!("C{i:07}")
}

impl PlantedWorld {
    pub fn n(&self) -> usize {
        self.entities.len()
    }

    fn d(&self) -> usize {
        self.params.dim
    }

    /// `x_k` for every ordered pair, as `K` row-major `n × n` blocks.
    fn all_logits(e: &[f64], r: &[f64], w: &[f64], n: usize, k: usize, d: usize) -> Vec<f64> {
        let mut out = vec![0.0; k * n * n];
        let mut m = vec![0.0; d * d];
        let mut a = vec![0.0; n * d];
        for kk in 0..k {
            let rk = &r[kk * d..(kk + 1) * d];
            for i in 0..d {
                for l in 0..d {
                    m[i * d + l] = (0..d).map(|j| w[(i * d + j) * d + l] * rk[j]).sum();
                }
            }
            for s in 0..n {
                for l in 0..d {
                    a[s * d + l] = (0..d).map(|i| e[s * d + i] * m[i * d + l]).sum();
                }
            }
            for s in 0..n {
                for o in 0..n {
                    out[(kk * n + s) * n + o] = (0..d).map(|l| a[s * d + l] * e[o * d + l]).sum();
                }
            }
        }
        out
    }

    /// Planted probability of `(s, k, o)` by entity index.
    pub fn probability(&self, s: usize, k: usize, o: usize) -> f64 {
        let d = self.d();
        let (es, eo, rk) = (&self.e[s * d..(s + 1) * d], &self.e[o * d..(o + 1) * d], &self.r[k * d..(k + 1) * d]);
        let mut x = 0.0;
        for i in 0..d {
            for j in 0..d {
                for l in 0..d {
                    x += self.w[(i * d + j) * d + l] * es[i] * rk[j] * eo[l];
                }
            }
        }
        sigmoid(x)
    }

    pub fn index(&self, cui: &str) -> Option<usize> {
        self.kg.node_index(cui)
    }
}

/// Solves the small dense system `a x = b` by Gaussian elimination with
/// partial pivoting.
fn solve(mut a: Vec<f64>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&x, &y| a[x * n + c].abs().total_cmp(&a[y * n + c].abs()))?;
        if a[p * n + c].abs() < 1e-12 {
            return None;
        }
        for j in 0..n {
            a.swap(c * n + j, p * n + j);
        }
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r * n + c] / a[c * n + c];
            for j in c..n {
                a[r * n + j] -= f * a[c * n + j];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for c in (0..n).rev() {
        x[c] = (b[c] - (c + 1..n).map(|j| a[c * n + j] * x[j]).sum::<f64>()) / a[c * n + c];
    }
    Some(x)
}

pub fn plant_kg(params: &WorldParams) -> Result<PlantedWorld> {
    params.validate()?;
    let (n, k, d) = (params.n_entities, params.relation_types, params.dim);
    let vocab = relation_vocab(k)?;
    let mut rng = stage_rng(params.seed, "synth.world");
    let mut normal = |len: usize| -> Vec<f64> { (0..len).map(|_| rng.sample(StandardNormal)).collect() };
    let mut features: Vec<f64> = normal(n * d).into_iter().map(|x| x * params.feature_scale).collect();
    let mut e: Vec<f64> = features.iter().map(|&g| sigmoid(g)).collect();
    for s in 0..n {
        features[s * d + d - 1] = 0.0;
        e[s * d + d - 1] = 1.0;
    }
    let r = normal(k * d);
    let mut w: Vec<f64> = normal(d * d * d).into_iter().map(|x| x / d as f64).collect();
    let slab = |j: usize| ((d - 1) * d + j) * d + d - 1;
    for j in 0..d {
        w[slab(j)] = 0.0;
    }

    let off_diagonal = |x: &[f64], kk: usize| -> Vec<f64> {
        (0..n).flat_map(|s| (0..n).filter(move |&o| o != s).map(move |o| (s, o))).map(|(s, o)| x[(kk * n + s) * n + o]).collect()
    };
    let x = PlantedWorld::all_logits(&e, &r, &w, n, k, d);
    let target: Vec<f64> = (0..k)
        .map(|kk| {
            let v = off_diagonal(&x, kk);
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let sd = (v.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
            -params.bias * sd - mean
        })
        .collect();
    // The bias of type k is Σ_j slab_j r_k[j]; take slab = Rᵀ a with (R Rᵀ) a = target.
    let gram: Vec<f64> = (0..k * k)
        .map(|ij| (0..d).map(|t| r[(ij / k) * d + t] * r[(ij % k) * d + t]).sum())
        .collect();
    let a = solve(gram, target).ok_or_else(|| Error::Generation("relation embeddings are linearly dependent".into()))?;
    for j in 0..d {
        w[slab(j)] = (0..k).map(|kk| a[kk] * r[kk * d + j]).sum();
    }

    let x = PlantedWorld::all_logits(&e, &r, &w, n, k, d);
    let mut ranked: Vec<(f64, usize, usize, usize)> = (0..k)
        .flat_map(|kk| (0..n).flat_map(move |s| (0..n).filter(move |&o| o != s).map(move |o| (kk, s, o))))
        .map(|(kk, s, o)| (x[(kk * n + s) * n + o], s, kk, o))
        .collect();
    ranked.sort_by(|p, q| q.0.total_cmp(&p.0).then((p.1, p.2, p.3).cmp(&(q.1, q.2, q.3))));
    let cap = (params.density * ranked.len() as f64).floor() as usize;
    if cap == 0 {
        return Err(Error::Config(format!("density {} admits no edges among {} candidates", params.density, ranked.len())));
    }
    let pivot = ranked[cap - 1].0;
    if pivot <= 0.0 {
        return Err(Error::Generation(format!(
            "only {} of the {cap} top scores are positive; no rescaling lifts them to p_hi",
            ranked.iter().take(cap).filter(|v| v.0 > 0.0).count()
        )));
    }
    // A hair above the exact scale keeps the pivot edge clear of p_hi under re-summation.
    let scale = (params.p_hi / (1.0 - params.p_hi)).ln() / pivot * (1.0 + 1e-9);
    w.iter_mut().for_each(|v| *v *= scale);
    let x: Vec<f64> = x.into_iter().map(|v| v * scale).collect();

    let entities: Vec<String> = (0..n).map(entity_id).collect();
    let mut edges: Vec<(usize, usize, usize)> = ranked[..cap]
        .iter()
        .filter(|v| sigmoid(v.0 * scale) >= params.p_hi)
        .map(|v| (v.1, v.3, v.2))
        .collect();
    edges.sort_unstable();
    let mut kg = KnowledgeGraph::new(vocab.clone());
    for cui in &entities {
        kg.add_node(cui);
    }
    for (s, o, kk) in edges {
        kg.add_edge(Triplet {
            subject: entities[s].clone(),
            relation: RelationLabel::Type(kk),
            object: entities[o].clone(),
        })?;
    }
    let low = |s: usize, o: usize| (0..k).all(|kk| sigmoid(x[(kk * n + s) * n + o]) <= params.p_lo);
    let mut negative_pool = Vec::new();
    for s in 0..n {
        for o in s + 1..n {
            if low(s, o) && low(o, s) {
                negative_pool.push((entities[s].clone(), entities[o].clone()));
            }
        }
    }
    Ok(PlantedWorld {
        params: params.clone(),
        vocab,
        entities,
        features,
        e,
        r,
        w,
        kg,
        negative_pool,
    })
}

/// One piece of a sentence template.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Slot {
    Subject,
    Object,
    Trigger,
    Word(String),
}

pub type Template = Vec<Slot>;

pub const SEMANTIC_TYPE: &str = "t047";

const FILLERS: [&str; 24] = [
    "the", "patient", "with", "was", "noted", "in", "and", "of", "case", "history", "presented", "findings", "clinical", "onset", "a",
    "acute", "chronic", "after", "observed", "report", "severe", "mild", "often", "signs",
];

const TITLE_WORDS: [&str; 8] = ["case", "report", "review", "study", "cohort", "series", "outcomes", "management"];

pub fn default_templates() -> Vec<Template> {
    let w = |s: &str| Slot::Word(s.into());
    vec![
        vec![Slot::Subject, Slot::Trigger, Slot::Object, w("was"), w("noted")],
        vec![w("patients"), w("with"), Slot::Subject, w("often"), Slot::Trigger, Slot::Object],
        vec![Slot::Subject, w("is"), w("reported"), w("to"), Slot::Trigger, Slot::Object],
        vec![w("in"), w("this"), w("case"), Slot::Subject, Slot::Trigger, Slot::Object, w("findings")],
    ]
}

/// The cue word planted in sentences expressing relation type `k`.
pub fn trigger(vocab: &RelationVocab, k: usize) -> String {
    format!("{}_cue", vocab.scored()[k].to_lowercase())
}

/// Surface token of an entity mention.
pub fn entity_token(cui: &str) -> String {
    cui.to_lowercase()
}

fn marker(role: char, open: bool) -> String {
    format!("<{role}-{SEMANTIC_TYPE}{}>", if open { "" } else { "/" })
}

/// A bag per pair with 1 to `l_max` sentences. Each sentence expresses one of
/// the pair's relation types through its trigger; NA pairs get a filler
/// instead. With probability `noise_rate` the trigger becomes a filler word.
pub fn gen_bags(
    vocab: &RelationVocab,
    pairs: &[(String, String, LabelVector)],
    templates: &[Template],
    noise_rate: f64,
    l_max: usize,
    seed: u64,
) -> Result<Vec<BagRecord>> {
    if !(0.0..=1.0).contains(&noise_rate) {
        return Err(Error::Config(format!("noise_rate must lie in [0, 1], got {noise_rate}")));
    }
    if l_max == 0 {
        return Err(Error::Config("l_max must be positive".into()));
    }
    for t in templates {
        for slot in [Slot::Subject, Slot::Object, Slot::Trigger] {
            if !t.contains(&slot) {
                return Err(Error::Config(format!("template {t:?} lacks a {slot:?} slot")));
            }
        }
    }
    if templates.is_empty() {
        return Err(Error::Config("no sentence templates".into()));
    }
    let mut rng = stage_rng(seed, "synth.bags");
    let mut out = Vec::with_capacity(pairs.len());
    for (s, o, label) in pairs {
        let types: Vec<usize> = (0..label.len()).filter(|&k| label.get(k)).collect();
        let size = rng.random_range(1..=l_max);
        let mut sentences = Vec::with_capacity(size);
        for _ in 0..size {
            let template = &templates[rng.random_range(0..templates.len())];
            let cue = if types.is_empty() || rng.random_bool(noise_rate) {
                FILLERS[rng.random_range(0..FILLERS.len())].to_string()
            } else {
                trigger(vocab, types[rng.random_range(0..types.len())])
            };
            let mut tokens = Vec::new();
            let (mut subj, mut obj) = (Vec::new(), Vec::new());
            for slot in template {
                match slot {
                    Slot::Subject | Slot::Object => {
                        let (role, cui, idx) = if *slot == Slot::Subject { ('S', s, &mut subj) } else { ('O', o, &mut obj) };
                        idx.push(tokens.len());
                        tokens.push(marker(role, true));
                        tokens.push(entity_token(cui));
                        tokens.push(marker(role, false));
                    }
                    Slot::Trigger => tokens.push(cue.clone()),
                    Slot::Word(w) => tokens.push(w.clone()),
                }
            }
            let title = (0..2).map(|_| TITLE_WORDS[rng.random_range(0..TITLE_WORDS.len())].to_string()).collect();
            sentences.push(SentenceRecord {
                tokens,
                subj_marker_idx: subj,
                obj_marker_idx: obj,
                title,
            });
        }
        out.push(BagRecord {
            subject: s.clone(),
            object: o.clone(),
            relations: if types.is_empty() { vec![vocab.na_name().to_string()] } else { label.names(vocab) },
            sentences,
        });
    }
    Ok(out)
}

/// Symmetric counts: planted edge pairs in `[hi, 2·hi]`, negative-pool pairs
/// in `[0, lo]`. Other pairs are absent.
pub fn gen_cooc(world: &PlantedWorld, hi_count: u64, lo_count: u64, seed: u64) -> Result<CooccurrenceMatrix> {
    if hi_count <= lo_count {
        return Err(Error::Config(format!("hi_count {hi_count} must exceed lo_count {lo_count}")));
    }
    let mut rng = stage_rng(seed, "synth.cooc");
    let mut m = CooccurrenceMatrix::new();
    let mut seen = BTreeSet::new();
    for t in world.kg.edges() {
        let key = if t.subject < t.object { (&t.subject, &t.object) } else { (&t.object, &t.subject) };
        if seen.insert(key) {
            m.insert(key.0, key.1, rng.random_range(hi_count..=2 * hi_count));
        }
    }
    for (a, b) in &world.negative_pool {
        m.insert(a, b, rng.random_range(0..=lo_count));
    }
    Ok(m)
}

/// Everything `write_dataset` needs beyond the world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub world: WorldParams,
    pub noise_rate: f64,
    pub bag_max: usize,
    /// Share of training pairs that get a sentence bag.
    pub aligned_fraction: f64,
    pub valid_fraction: f64,
    pub test_fraction: f64,
    /// NA training bags per aligned positive bag.
    pub na_bag_ratio: f64,
    pub hi_count: u64,
    pub lo_count: u64,
    /// Standard deviation of the noise added to the planted embeddings.
    pub embedding_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            world: WorldParams::default(),
            noise_rate: 0.3,
            bag_max: 4,
            aligned_fraction: 0.4,
            valid_fraction: 0.1,
            test_fraction: 0.1,
            na_bag_ratio: 1.0,
            hi_count: 20,
            lo_count: 5,
            embedding_noise: 0.1,
        }
    }
}

pub const FILES: SynthFiles = SynthFiles {
    kg: "kg.tsv",
    bags: "bags.jsonl",
    valid: "valid.tsv",
    valid_bags: "valid_bags.jsonl",
    test: "test.tsv",
    test_bags: "test_bags.jsonl",
    cooc: "cooc.txt",
    embeddings: "embeddings.txt",
    manifest: "manifest.json",
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SynthFiles {
    pub kg: &'static str,
    pub bags: &'static str,
    pub valid: &'static str,
    pub valid_bags: &'static str,
    pub test: &'static str,
    pub test_bags: &'static str,
    pub cooc: &'static str,
    pub embeddings: &'static str,
    pub manifest: &'static str,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub entities: usize,
    pub planted_edges: usize,
    /// Lines of the training knowledge graph file, NA lines included.
    pub triplets: usize,
    pub train_pairs: usize,
    pub valid_pairs: usize,
    pub test_pairs: usize,
    pub bags: usize,
    pub aligned_bags: usize,
    pub na_bags: usize,
    pub negative_pool: usize,
    pub cooc_entries: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Planted {
    pub e: Vec<f64>,
    pub r: Vec<f64>,
    pub w: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: SynthConfig,
    pub counts: Counts,
    pub files: std::collections::BTreeMap<String, String>,
    pub planted: Planted,
}

/// Train, validation and test material cut from one world.
#[derive(Clone, Debug)]
pub struct SynthSplits {
    pub world: PlantedWorld,
    pub train_kg: KnowledgeGraph,
    pub train_bags: Vec<BagRecord>,
    pub valid: Vec<(String, String, LabelVector)>,
    pub test: Vec<(String, String, LabelVector)>,
    pub valid_bags: Vec<BagRecord>,
    pub test_bags: Vec<BagRecord>,
    pub cooc: CooccurrenceMatrix,
    pub embeddings: String,
    pub aligned_bags: usize,
    pub na_bags: usize,
}

/// Cuts a planted world into splits. Held-out pairs are planted positives
/// plus an equal number of negative-pool pairs, all with bags.
pub fn generate(config: &SynthConfig) -> Result<SynthSplits> {
    for (name, v) in [
        ("aligned_fraction", config.aligned_fraction),
        ("valid_fraction", config.valid_fraction),
        ("test_fraction", config.test_fraction),
    ] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
        }
    }
    if config.valid_fraction + config.test_fraction >= 1.0 {
        return Err(Error::Config("valid_fraction + test_fraction must stay below 1".into()));
    }
    if !(config.na_bag_ratio >= 0.0 && config.embedding_noise >= 0.0) {
        return Err(Error::Config("na_bag_ratio and embedding_noise must be non-negative".into()));
    }
    let world = plant_kg(&config.world)?;
    let seed = config.world.seed;
    let mut rng = stage_rng(seed, "synth.split");
    let k = world.vocab.k();
    let zero = LabelVector::zeros(k);

    let mut positives: Vec<(String, String, LabelVector)> = world.kg.pair_labels().into_iter().map(|((s, o), l)| (s, o, l)).collect();
    positives.shuffle(&mut rng);
    let n_test = (positives.len() as f64 * config.test_fraction).round() as usize;
    let n_valid = (positives.len() as f64 * config.valid_fraction).round() as usize;
    let train: Vec<_> = positives.split_off(n_test + n_valid);
    let valid_pos = positives.split_off(n_test);
    let test_pos = positives;

    let mut pool = world.negative_pool.clone();
    pool.shuffle(&mut rng);
    let n_aligned = (train.len() as f64 * config.aligned_fraction).round() as usize;
    let n_na = (n_aligned as f64 * config.na_bag_ratio).round() as usize;
    let needed = test_pos.len() + valid_pos.len() + n_na;
    if pool.len() < needed {
        return Err(Error::Generation(format!("negative pool has {} pairs, {needed} needed for held-out and NA bags", pool.len())));
    }
    let mut orient = |(a, b): (String, String)| -> (String, String, LabelVector) {
        if rng.random::<bool>() {
            (b, a, zero.clone())
        } else {
            (a, b, zero.clone())
        }
    };
    let mut take = |n: usize, pool: &mut Vec<(String, String)>| -> Vec<(String, String, LabelVector)> {
        pool.drain(..n).map(&mut orient).collect()
    };
    let test_neg = take(test_pos.len(), &mut pool);
    let valid_neg = take(valid_pos.len(), &mut pool);
    let na_pairs = take(n_na, &mut pool);

    let mut train_kg = KnowledgeGraph::new(world.vocab.clone());
    for cui in &world.entities {
        train_kg.add_node(cui);
    }
    let na_name = world.vocab.na_name().to_string();
    for (s, o, l) in train.iter().chain(&na_pairs) {
        let names = if l.is_na() { vec![na_name.clone()] } else { l.names(&world.vocab) };
        for name in names {
            train_kg.add_edge(Triplet {
                subject: s.clone(),
                relation: world.vocab.parse(&name)?,
                object: o.clone(),
            })?;
        }
    }
    let mut bag_pairs: Vec<(String, String, LabelVector)> = train[..n_aligned].to_vec();
    bag_pairs.extend(na_pairs.iter().cloned());
    let templates = default_templates();
    let train_bags = gen_bags(&world.vocab, &bag_pairs, &templates, config.noise_rate, config.bag_max, seed)?;
    let valid: Vec<_> = valid_pos.into_iter().chain(valid_neg).collect();
    let test: Vec<_> = test_pos.into_iter().chain(test_neg).collect();
    let valid_bags = gen_bags(&world.vocab, &valid, &templates, config.noise_rate, config.bag_max, seed ^ 1)?;
    let test_bags = gen_bags(&world.vocab, &test, &templates, config.noise_rate, config.bag_max, seed ^ 2)?;
    let cooc = gen_cooc(&world, config.hi_count, config.lo_count, seed)?;

    let d = config.world.dim;
    let mut noise_rng = stage_rng(seed, "synth.embeddings");
    let mut embeddings = format!("{} {d}\n", world.n());
    for (i, cui) in world.entities.iter().enumerate() {
        embeddings.push_str(cui);
        for v in &world.features[i * d..(i + 1) * d] {
            let eps: f64 = noise_rng.sample(StandardNormal);
            embeddings.push_str(&format!(" {}", v + config.embedding_noise * eps));
        }
        embeddings.push('\n');
    }
    Ok(SynthSplits {
        world,
        train_kg,
        train_bags,
        valid,
        test,
        valid_bags,
        test_bags,
        cooc,
        embeddings,
        aligned_bags: n_aligned,
        na_bags: n_na,
    })
}

fn pairs_tsv(pairs: &[(String, String, LabelVector)], vocab: &RelationVocab) -> String {
    let mut s = String::new();
    for (a, b, l) in pairs {
        let names = if l.is_na() { vec![vocab.na_name().to_string()] } else { l.names(vocab) };
        for name in names {
            s.push_str(&format!("{a}\t{name}\t{b}\n"));
        }
    }
    s
}

fn bags_jsonl(bags: &[BagRecord]) -> String {
    bags.iter().map(|b| serde_json::to_string(b).expect("bag records serialize") + "\n").collect()
}

/// Writes a dataset directory. A non-empty `dir` is refused unless `force`.
pub fn write_dataset(dir: &Path, config: &SynthConfig, force: bool) -> Result<Manifest> {
    if dir.exists() {
        let occupied = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?.next().is_some();
        if occupied && !force {
            return Err(Error::Config(format!("{} is not empty; pass --force to overwrite", dir.display())));
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let splits = generate(config)?;
    let world = &splits.world;
    let contents: [(&str, String); 8] = [
        (FILES.kg, splits.train_kg.to_tsv()),
        (FILES.bags, bags_jsonl(&splits.train_bags)),
        (FILES.valid, pairs_tsv(&splits.valid, &world.vocab)),
        (FILES.valid_bags, bags_jsonl(&splits.valid_bags)),
        (FILES.test, pairs_tsv(&splits.test, &world.vocab)),
        (FILES.test_bags, bags_jsonl(&splits.test_bags)),
        (FILES.cooc, splits.cooc.to_text()),
        (FILES.embeddings, splits.embeddings.clone()),
    ];
    let mut files = std::collections::BTreeMap::new();
    for (name, text) in &contents {
        let path: PathBuf = dir.join(name);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        let key = name.split('.').next().expect("file name").to_string();
        files.insert(key, name.to_string());
    }
    let manifest = Manifest {
        config: config.clone(),
        counts: Counts {
            entities: world.n(),
            planted_edges: world.kg.edges().len(),
            triplets: splits.train_kg.edges().len(),
            train_pairs: splits.train_kg.pair_labels().len(),
            valid_pairs: splits.valid.len(),
            test_pairs: splits.test.len(),
            bags: splits.train_bags.len(),
            aligned_bags: splits.aligned_bags,
            na_bags: splits.na_bags,
            negative_pool: world.negative_pool.len(),
            cooc_entries: splits.cooc.len(),
        },
        files,
        planted: Planted {
            e: world.e.clone(),
            r: world.r.clone(),
            w: world.w.clone(),
        },
    };
    let path = dir.join(FILES.manifest);
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Generation(e.to_string()))?;
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
