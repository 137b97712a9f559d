//! Fixtures shared by the benchmarks.

use kgtext_core::data::parse_kg;
use kgtext_core::diff::Tensor;
use kgtext_core::{KnowledgeGraph, RelationVocab};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f32> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// A random graph with `n` nodes and about `edges` typed edges.
pub fn random_kg(n: usize, edges: usize, seed: u64) -> KnowledgeGraph {
    let vocab = RelationVocab::default();
    let names = vocab.scored();
    let mut r = rng(seed);
    let mut text = String::new();
    for _ in 0..edges {
        let (s, o) = (r.random_range(0..n), r.random_range(0..n));
        if s != o {
            let k = &names[r.random_range(0..names.len())];
            text.push_str(&format!("C{s}\t{k}\tC{o}\n"));
        }
    }
    parse_kg(&text, &vocab, "bench").unwrap()
}

/// Scored examples with roughly one positive in four.
pub fn scored(n: usize, seed: u64) -> Vec<(f64, bool)> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let label = r.random_bool(0.25);
            let shift = if label { 0.3 } else { 0.0 };
            ((r.random::<f64>() * 0.7 + shift).min(1.0), label)
        })
        .collect()
}
