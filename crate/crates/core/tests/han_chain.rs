//! HAN encoder on the chain A -MC-> B -MC-> C against a plain-loop
//! reimplementation of node attention, head concatenation and semantic
//! attention.

use kgtext_core::data::parse_kg;
use kgtext_core::diff::{ParamStore, Tape, Tensor};
use kgtext_core::graph::{AttentionActivation, Han, MetaPath, NeighborIndex};
use kgtext_core::RelationVocab;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const D_HI: usize = 3;
const D_HA: usize = 4;
const D_SEM: usize = 3;
const HEADS: usize = 2;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// `x · W` with `W` stored row-major as `rows × cols`.
fn vecmat(x: &[f64], w: &[f64], cols: usize) -> Vec<f64> {
    (0..cols).map(|j| x.iter().enumerate().map(|(i, xi)| xi * w[i * cols + j]).sum()).collect()
}

struct Oracle<'a> {
    store: &'a ParamStore<f64>,
}

impl Oracle<'_> {
    fn p(&self, name: &str) -> &[f64] {
        self.store.get(self.store.id(name).unwrap()).data()
    }

    /// Per-path embeddings of `nodes`, with neighbor lists given as node indices.
    fn path_embeddings(&self, feats: &[Vec<f64>], neighbors: &[Vec<usize>], path: usize) -> Vec<Vec<f64>> {
        let (w, b) = (self.p("han.proj_w"), self.p("han.proj_b"));
        let proj: Vec<Vec<f64>> = feats
            .iter()
            .map(|x| vecmat(x, w, D_HA).iter().zip(b).map(|(v, bi)| v + bi).collect())
            .collect();
        let dh = D_HA / HEADS;
        neighbors
            .iter()
            .enumerate()
            .map(|(u, nb)| {
                let mut z = Vec::with_capacity(D_HA);
                for k in 0..HEADS {
                    let al = self.p(&format!("han.attn.{path}.{k}.left"));
                    let ar = self.p(&format!("han.attn.{path}.{k}.right"));
                    let head = |v: usize| &proj[v][k * dh..(k + 1) * dh];
                    let dot = |a: &[f64], h: &[f64]| a.iter().zip(h).map(|(x, y)| x * y).sum::<f64>();
                    let scores: Vec<f64> = nb.iter().map(|&v| sigmoid(dot(al, head(u)) + dot(ar, head(v)))).collect();
                    let alpha = softmax(&scores);
                    for c in 0..dh {
                        let s: f64 = nb.iter().zip(&alpha).map(|(&v, a)| a * head(v)[c]).sum();
                        z.push(sigmoid(s));
                    }
                }
                z
            })
            .collect()
    }

    fn encode(&self, feats: &[Vec<f64>], paths: &[Vec<Vec<usize>>]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let per_path: Vec<Vec<Vec<f64>>> = paths.iter().enumerate().map(|(p, nb)| self.path_embeddings(feats, nb, p)).collect();
        let (w, b, q) = (self.p("han.sem_w"), self.p("han.sem_b"), self.p("han.sem_q"));
        let scores: Vec<f64> = per_path
            .iter()
            .map(|zs| {
                let total: f64 = zs
                    .iter()
                    .map(|z| {
                        let t: Vec<f64> = vecmat(z, w, D_SEM).iter().zip(b).map(|(v, bi)| (v + bi).tanh()).collect();
                        t.iter().zip(q).map(|(x, y)| x * y).sum::<f64>()
                    })
                    .sum();
                total / zs.len() as f64
            })
            .collect();
        let beta = softmax(&scores);
        let n = feats.len();
        let z = (0..n)
            .map(|u| (0..D_HA).map(|c| per_path.iter().zip(&beta).map(|(zs, bp)| bp * zs[u][c]).sum()).collect())
            .collect();
        (beta, z)
    }
}

#[test]
fn three_node_chain_matches_loop_oracle() {
    let vocab = RelationVocab::default();
    let kg = parse_kg("A\tMC\tB\nB\tMC\tC\n", &vocab, "chain").unwrap();
    let (a, b, c) = (kg.node_index("A").unwrap(), kg.node_index("B").unwrap(), kg.node_index("C").unwrap());
    let paths = [MetaPath::parse("MC", &vocab).unwrap(), MetaPath::parse("MC,MC", &vocab).unwrap()];
    let index = NeighborIndex::build(&kg, &paths, 16, 0).unwrap();

    let sorted = |mut v: Vec<usize>| {
        v.sort_unstable();
        v
    };
    let expected = [
        vec![sorted(vec![a, b]), sorted(vec![b, c]), vec![c]],
        vec![sorted(vec![a, c]), vec![b], vec![c]],
    ];
    for (p, lists) in expected.iter().enumerate() {
        for (node, want) in [a, b, c].into_iter().zip(lists) {
            assert_eq!(&sorted(index.neighbors(p, node).to_vec()), want, "path {p} node {node}");
        }
    }

    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let han = Han::init(&mut store, "han", D_HI, D_HA, D_SEM, HEADS, paths.len(), AttentionActivation::Sigmoid, &mut rng).unwrap();
        for name in ["han.proj_b", "han.sem_b"] {
            let id = store.id(name).unwrap();
            for v in store.get_mut(id).data_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
        }
        let feats: Vec<Vec<f64>> = (0..3).map(|_| (0..D_HI).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let flat: Vec<f64> = feats.iter().flatten().copied().collect();

        let tape = Tape::new();
        let h = tape.constant(Tensor::new(vec![3, D_HI], flat).unwrap()).unwrap();
        let nodes = [a, b, c];
        let out = han.encode(&tape, &store, h, &index, &nodes).unwrap();
        let z = tape.value(out.z).clone();
        let beta = tape.value(out.beta).clone();

        // The oracle addresses nodes by their row in `feats`, which is node index order.
        let lists: Vec<Vec<Vec<usize>>> = (0..paths.len()).map(|p| (0..3).map(|u| index.neighbors(p, u).to_vec()).collect()).collect();
        let (want_beta, want_z) = Oracle { store: &store }.encode(&feats, &lists);

        for (got, want) in beta.data().iter().zip(&want_beta) {
            assert!((got - want).abs() < 1e-12, "seed {seed}: beta {got} vs {want}");
        }
        for (row, &u) in nodes.iter().enumerate() {
            for col in 0..D_HA {
                let (got, want) = (z.at(row, col), want_z[u][col]);
                assert!((got - want).abs() < 1e-12, "seed {seed} node {u} col {col}: {got} vs {want}");
            }
        }
    }
}
