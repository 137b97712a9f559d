use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use kgtext_bench::{random_kg, rng, scored, uniform};
use kgtext_core::diff::{ParamStore, Tape};
use kgtext_core::eval::select_threshold;
use kgtext_core::graph::{AttentionActivation, Han, MetaPath, NeighborIndex};
use kgtext_core::scoring::ScoringHead;
use kgtext_core::{RelationVocab, ScorerKind};

const BATCH: usize = 64;
const D: usize = 32;
const K: usize = 3;

fn scorers(c: &mut Criterion) {
    let mut group = c.benchmark_group("scorer");
    for kind in [ScorerKind::Linear, ScorerKind::Transe, ScorerKind::Tucker] {
        let mut r = rng(1);
        let mut store = ParamStore::<f32>::new();
        let head = ScoringHead::init(&mut store, "head", kind, D, D, K, 6.0, false, &mut r).unwrap();
        let hs = store.add("hs", uniform(&mut r, &[BATCH, D]));
        let ho = store.add("ho", uniform(&mut r, &[BATCH, D]));
        group.bench_function(format!("{kind:?}/forward_backward"), |b| {
            b.iter(|| {
                let tape = Tape::new();
                let p = head.probabilities(&tape, &store, tape.param(&store, hs), tape.param(&store, ho)).unwrap();
                let loss = tape.sum(p).unwrap();
                black_box(tape.backward(loss).unwrap());
            })
        });
    }
    group.finish();
}

fn han(c: &mut Criterion) {
    let vocab = RelationVocab::default();
    let kg = random_kg(500, 3000, 2);
    let paths: Vec<MetaPath> = ["DDx", "MC", "MBC", "MC,MC"].iter().map(|p| MetaPath::parse(p, &vocab).unwrap()).collect();
    let index = NeighborIndex::build(&kg, &paths, 16, 0).unwrap();
    let mut r = rng(3);
    let mut store = ParamStore::<f32>::new();
    let han = Han::init(&mut store, "han", 64, 32, 32, 8, paths.len(), AttentionActivation::Sigmoid, &mut r).unwrap();
    let feats = store.add("h_init", uniform(&mut r, &[kg.node_count(), 64]));
    let nodes: Vec<usize> = (0..kg.node_count()).step_by(4).collect();
    c.bench_function("han/encode_forward_backward", |b| {
        b.iter(|| {
            let tape = Tape::new();
            let out = han.encode(&tape, &store, tape.param(&store, feats), &index, &nodes).unwrap();
            let loss = tape.sum(out.z).unwrap();
            black_box(tape.backward(loss).unwrap());
        })
    });
}

fn thresholds(c: &mut Criterion) {
    let examples = scored(20_000, 4);
    c.bench_function("select_threshold/20k", |b| {
        b.iter_batched(|| examples.clone(), |s| black_box(select_threshold(&s).unwrap()), BatchSize::LargeInput)
    });
}

criterion_group!(benches, scorers, han, thresholds);
criterion_main!(benches);
