//! Meta paths and their precomputed neighborhoods.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{KnowledgeGraph, RelationVocab};
use crate::error::{Error, Result};

/// A sequence of relation types walked from a start node. All node types
/// along the path are the single concept type.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaPath {
    pub name: String,
    pub relations: Vec<usize>,
}

impl MetaPath {
    /// Parses a comma-separated relation sequence such as `MC,DDx`.
    pub fn parse(spec: &str, vocab: &RelationVocab) -> Result<Self> {
        let names: Vec<&str> = spec.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        if names.is_empty() {
            return Err(Error::Config(format!("empty meta path `{spec}`")));
        }
        let relations = names
            .iter()
            .map(|n| vocab.index(n).map_err(|e| Error::Config(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        Ok(MetaPath {
            name: names.join(","),
            relations,
        })
    }
}

/// Every single-relation path plus `MC,MC` when the vocabulary has `MC`.
pub fn default_metapaths(vocab: &RelationVocab) -> Vec<MetaPath> {
    let mut paths: Vec<MetaPath> = vocab
        .scored()
        .iter()
        .enumerate()
        .map(|(k, n)| MetaPath {
            name: n.clone(),
            relations: vec![k],
        })
        .collect();
    if let Ok(mc) = vocab.index("MC") {
        paths.push(MetaPath {
            name: "MC,MC".into(),
            relations: vec![mc, mc],
        });
    }
    paths
}

/// End nodes of all walks from `node` along `path`, plus `node` itself,
/// ordered by concept id.
pub fn metapath_neighbors(kg: &KnowledgeGraph, path: &MetaPath, node: &str) -> Result<Vec<usize>> {
    let start = kg.node_index(node).ok_or_else(|| Error::Lookup(node.to_string()))?;
    Ok(neighbors_of(kg, path, start))
}

fn neighbors_of(kg: &KnowledgeGraph, path: &MetaPath, start: usize) -> Vec<usize> {
    let mut frontier: BTreeSet<usize> = BTreeSet::from([start]);
    for &k in &path.relations {
        frontier = frontier.iter().flat_map(|&u| kg.outgoing(k, u).iter().copied()).collect();
    }
    frontier.insert(start);
    let mut out: Vec<usize> = frontier.into_iter().collect();
    out.sort_by(|&a, &b| kg.node(a).cmp(kg.node(b)));
    out
}

fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for p in parts {
        for &b in *p {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h ^= 0xff;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Neighborhoods for every (meta path, node), capped at `cap` entries.
/// Oversized neighborhoods keep the node itself and a sample of the rest
/// drawn with a generator keyed on the seed, path and concept id, so the
/// result does not depend on node storage order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborIndex {
    pub paths: Vec<MetaPath>,
    /// `lists[p][node]`, ordered by concept id.
    lists: Vec<Vec<Vec<usize>>>,
}

impl NeighborIndex {
    pub fn build(kg: &KnowledgeGraph, paths: &[MetaPath], cap: usize, seed: u64) -> Result<Self> {
        if paths.is_empty() {
            return Err(Error::Config("at least one meta path is required".into()));
        }
        if cap == 0 {
            return Err(Error::Config("neighborhood cap must be positive".into()));
        }
        let mut lists = Vec::with_capacity(paths.len());
        for path in paths {
            if path.relations.iter().any(|&k| k >= kg.vocab().k()) {
                return Err(Error::Config(format!("meta path `{}` uses an unknown relation", path.name)));
            }
            let mut per_node = Vec::with_capacity(kg.node_count());
            for u in 0..kg.node_count() {
                let mut nb = neighbors_of(kg, path, u);
                if nb.len() > cap {
                    let others: Vec<usize> = nb.iter().copied().filter(|&v| v != u).collect();
                    let key = fnv1a(&[&seed.to_le_bytes(), path.name.as_bytes(), kg.node(u).as_bytes()]);
                    let mut rng = ChaCha8Rng::seed_from_u64(key);
                    let mut keep: Vec<usize> = rand::seq::index::sample(&mut rng, others.len(), cap - 1)
                        .into_iter()
                        .map(|i| others[i])
                        .collect();
                    keep.push(u);
                    keep.sort_by(|&a, &b| kg.node(a).cmp(kg.node(b)));
                    nb = keep;
                }
                per_node.push(nb);
            }
            lists.push(per_node);
        }
        Ok(NeighborIndex {
            paths: paths.to_vec(),
            lists,
        })
    }

    pub fn neighbors(&self, path: usize, node: usize) -> &[usize] {
        &self.lists[path][node]
    }

    pub fn node_count(&self) -> usize {
        self.lists.first().map_or(0, Vec::len)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::parse_kg;

    fn kg(text: &str) -> KnowledgeGraph {
        parse_kg(text, &RelationVocab::default(), "t").unwrap()
    }

    fn names(kg: &KnowledgeGraph, v: &[usize]) -> Vec<String> {
        v.iter().map(|&i| kg.node(i).to_string()).collect()
    }

    #[test]
    fn one_hop_includes_self() {
        let g = kg("A\tMC\tB\n");
        let p = MetaPath::parse("MC", g.vocab()).unwrap();
        assert_eq!(names(&g, &metapath_neighbors(&g, &p, "A").unwrap()), ["A", "B"]);
        assert_eq!(names(&g, &metapath_neighbors(&g, &p, "B").unwrap()), ["B"]);
    }

    #[test]
    fn two_hop_chain() {
        let g = kg("A\tMC\tB\nB\tMC\tC\n");
        let p = MetaPath::parse("MC, MC", g.vocab()).unwrap();
        assert_eq!(names(&g, &metapath_neighbors(&g, &p, "A").unwrap()), ["A", "C"]);
    }

    #[test]
    fn unknown_node_and_relation() {
        let g = kg("A\tMC\tB\n");
        let p = MetaPath::parse("MC", g.vocab()).unwrap();
        assert!(matches!(metapath_neighbors(&g, &p, "Z"), Err(Error::Lookup(_))));
        assert!(MetaPath::parse("MC,TREATS", g.vocab()).is_err());
    }

    #[test]
    fn defaults() {
        let names: Vec<String> = default_metapaths(&RelationVocab::default()).into_iter().map(|p| p.name).collect();
        assert_eq!(names, ["DDx", "MC", "MBC", "MC,MC"]);
    }

    #[test]
    fn cap_keeps_self_and_ignores_storage_order() {
        let mut a = String::new();
        let mut b = Vec::new();
        for i in 0..30 {
            b.push(format!("H\tMC\tN{i:02}\n"));
        }
        a.extend(b.iter().cloned());
        b.reverse();
        let (ga, gb) = (kg(&a), kg(&b.concat()));
        let p = default_metapaths(ga.vocab());
        let (ia, ib) = (NeighborIndex::build(&ga, &p, 8, 3).unwrap(), NeighborIndex::build(&gb, &p, 8, 3).unwrap());
        let ha = ga.node_index("H").unwrap();
        let hb = gb.node_index("H").unwrap();
        assert_eq!(ia.neighbors(1, ha).len(), 8);
        assert!(ia.neighbors(1, ha).contains(&ha));
        assert_eq!(names(&ga, ia.neighbors(1, ha)), names(&gb, ib.neighbors(1, hb)));
    }
}
