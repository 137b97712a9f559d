//! Typed knowledge graph over concept ids.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use indexmap::{IndexMap, IndexSet};

use super::vocab::{LabelVector, RelationLabel, RelationVocab};
use super::DataError;

/// The single node type shipped with the default vocabulary.
pub const DISEASE: &str = "disease";

/// A (subject, relation, object) edge.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Triplet {
    pub subject: String,
    pub relation: RelationLabel,
    pub object: String,
}

/// Nodes, deduplicated edges and per-relation adjacency.
#[derive(Clone, Debug)]
pub struct KnowledgeGraph {
    vocab: RelationVocab,
    nodes: IndexSet<String>,
    node_types: Vec<String>,
    edges: Vec<Triplet>,
    edge_set: HashSet<Triplet>,
    /// `adjacency[k][node]` lists outgoing neighbours via relation type k.
    adjacency: Vec<Vec<Vec<usize>>>,
}

impl KnowledgeGraph {
    pub fn new(vocab: RelationVocab) -> Self {
        let k = vocab.k();
        KnowledgeGraph {
            vocab,
            nodes: IndexSet::new(),
            node_types: Vec::new(),
            edges: Vec::new(),
            edge_set: HashSet::new(),
            adjacency: vec![Vec::new(); k],
        }
    }

    pub fn from_triplets(vocab: RelationVocab, triplets: impl IntoIterator<Item = Triplet>) -> Result<Self, DataError> {
        let mut kg = Self::new(vocab);
        for t in triplets {
            kg.add_edge(t)?;
        }
        Ok(kg)
    }

    pub fn add_node(&mut self, cui: &str) -> usize {
        if let Some(i) = self.nodes.get_index_of(cui) {
            return i;
        }
        self.nodes.insert(cui.to_string());
        self.node_types.push(DISEASE.to_string());
        for adj in &mut self.adjacency {
            adj.push(Vec::new());
        }
        self.nodes.len() - 1
    }

    /// Adds an edge; returns false when it was already present.
    pub fn add_edge(&mut self, t: Triplet) -> Result<bool, DataError> {
        if t.subject == t.object {
            return Err(DataError::Invalid(format!("self-loop edge on `{}`", t.subject)));
        }
        if let RelationLabel::Type(k) = t.relation {
            if k >= self.vocab.k() {
                return Err(DataError::Vocabulary(format!("relation index {k} out of range")));
            }
        }
        if self.edge_set.contains(&t) {
            return Ok(false);
        }
        let s = self.add_node(&t.subject);
        let o = self.add_node(&t.object);
        if let RelationLabel::Type(k) = t.relation {
            self.adjacency[k][s].push(o);
        }
        self.edge_set.insert(t.clone());
        self.edges.push(t);
        Ok(true)
    }

    pub fn vocab(&self) -> &RelationVocab {
        &self.vocab
    }

    pub fn nodes(&self) -> &IndexSet<String> {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_type(&self, i: usize) -> &str {
        &self.node_types[i]
    }

    pub fn node_index(&self, cui: &str) -> Option<usize> {
        self.nodes.get_index_of(cui)
    }

    pub fn node(&self, i: usize) -> &str {
        &self.nodes[i]
    }

    pub fn edges(&self) -> &[Triplet] {
        &self.edges
    }

    pub fn contains(&self, t: &Triplet) -> bool {
        self.edge_set.contains(t)
    }

    pub fn has_relation(&self, subject: &str, k: usize, object: &str) -> bool {
        self.edge_set.contains(&Triplet {
            subject: subject.to_string(),
            relation: RelationLabel::Type(k),
            object: object.to_string(),
        })
    }

    /// Outgoing neighbours of `node` via scored relation type `k`.
    pub fn outgoing(&self, k: usize, node: usize) -> &[usize] {
        &self.adjacency[k][node]
    }

    /// Groups edges by ordered (subject, object) pair into label vectors,
    /// preserving first-seen order. NA edges contribute all-zero vectors.
    pub fn pair_labels(&self) -> IndexMap<(String, String), LabelVector> {
        let mut out: IndexMap<(String, String), LabelVector> = IndexMap::new();
        for t in &self.edges {
            out.entry((t.subject.clone(), t.object.clone()))
                .or_insert_with(|| LabelVector::zeros(self.vocab.k()))
                .set(t.relation);
        }
        out
    }

    /// Checks that the adjacency lists agree with the edge list.
    pub fn check_consistency(&self) -> Result<(), DataError> {
        let mut from_edges: Vec<(usize, usize, usize)> = self
            .edges
            .iter()
            .filter_map(|t| match t.relation {
                RelationLabel::Type(k) => Some((k, self.node_index(&t.subject)?, self.node_index(&t.object)?)),
                RelationLabel::Na => None,
            })
            .collect();
        let mut from_adj: Vec<(usize, usize, usize)> = self
            .adjacency
            .iter()
            .enumerate()
            .flat_map(|(k, adj)| adj.iter().enumerate().flat_map(move |(s, os)| os.iter().map(move |&o| (k, s, o))))
            .collect();
        from_edges.sort_unstable();
        from_adj.sort_unstable();
        if from_edges != from_adj || self.edge_set.len() != self.edges.len() {
            return Err(DataError::Invalid("adjacency disagrees with edge list".into()));
        }
        Ok(())
    }

    /// Graph restricted to the given edge indices (node set shrinks accordingly).
    pub fn subgraph(&self, edge_indices: impl IntoIterator<Item = usize>) -> KnowledgeGraph {
        let mut kg = KnowledgeGraph::new(self.vocab.clone());
        for i in edge_indices {
            kg.add_edge(self.edges[i].clone()).expect("edges of a valid graph");
        }
        kg
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for t in &self.edges {
            let _ = writeln!(s, "{}\t{}\t{}", t.subject, self.vocab.name(t.relation), t.object);
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        std::fs::write(path, self.to_tsv()).map_err(|e| DataError::io(path, e))
    }
}

/// Parses `subject<TAB>relation<TAB>object` lines; `#` lines and blank lines are skipped.
pub fn parse_kg(text: &str, vocab: &RelationVocab, source: &str) -> Result<KnowledgeGraph, DataError> {
    let mut kg = KnowledgeGraph::new(vocab.clone());
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 || fields.iter().any(|f| f.trim().is_empty()) {
            return Err(DataError::Parse {
                file: source.to_string(),
                line: line_no,
                message: format!("expected 3 tab-separated fields, got {}", fields.len()),
            });
        }
        let relation = vocab.parse(fields[1].trim()).map_err(|_| DataError::UnknownRelation {
            file: source.to_string(),
            line: line_no,
            name: fields[1].trim().to_string(),
        })?;
        kg.add_edge(Triplet {
            subject: fields[0].trim().to_string(),
            relation,
            object: fields[2].trim().to_string(),
        })
        .map_err(|e| DataError::Parse {
            file: source.to_string(),
            line: line_no,
            message: e.to_string(),
        })?;
    }
    Ok(kg)
}

pub fn load_kg(path: &Path, vocab: &RelationVocab) -> Result<KnowledgeGraph, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    parse_kg(&text, vocab, &path.display().to_string())
}
