//! Pairing of bags with knowledge-graph triplets.

use std::collections::HashMap;
use std::path::Path;

use super::bags::SentenceBag;
use super::kg::{parse_kg, KnowledgeGraph};
use super::vocab::{LabelVector, RelationVocab};
use super::DataError;

/// A bag together with every triplet sharing its (subject, object) pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AlignedPair {
    pub bag: usize,
    pub triplets: Vec<usize>,
}

/// Text corpus and graph with the alignment between them. Indices refer to
/// `bags` and `kg.edges()`.
#[derive(Clone, Debug)]
pub struct MultimodalDataset {
    pub bags: Vec<SentenceBag>,
    pub kg: KnowledgeGraph,
    pub aligned: Vec<AlignedPair>,
    pub unaligned_triplets: Vec<usize>,
    pub unaligned_bags: Vec<usize>,
}

impl MultimodalDataset {
    /// Number of aligned triplets (a bag may align with several relation types).
    pub fn aligned_triplet_count(&self) -> usize {
        self.aligned.iter().map(|a| a.triplets.len()).sum()
    }

    pub fn aligned_triplets(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.aligned.iter().flat_map(|a| a.triplets.iter().copied()).collect();
        v.sort_unstable();
        v
    }

    /// Verifies that aligned and unaligned triplets partition the edge list
    /// and that aligned pairs use each bag once.
    pub fn check_partition(&self) -> Result<(), DataError> {
        let n = self.kg.edges().len();
        let mut seen = vec![false; n];
        for &t in self.aligned.iter().flat_map(|a| a.triplets.iter()).chain(&self.unaligned_triplets) {
            if t >= n || seen[t] {
                return Err(DataError::Invalid(format!("triplet {t} missing or assigned twice")));
            }
            seen[t] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(DataError::Invalid("some triplets are neither aligned nor unaligned".into()));
        }
        let mut bag_seen = vec![false; self.bags.len()];
        for b in self.aligned.iter().map(|a| a.bag).chain(self.unaligned_bags.iter().copied()) {
            if b >= self.bags.len() || bag_seen[b] {
                return Err(DataError::Invalid(format!("bag {b} missing or assigned twice")));
            }
            bag_seen[b] = true;
        }
        if bag_seen.iter().any(|s| !s) {
            return Err(DataError::Invalid("some bags are neither aligned nor unaligned".into()));
        }
        Ok(())
    }
}

/// Aligns each bag with the triplets whose endpoints equal its (subject, object).
pub fn split_aligned(bags: Vec<SentenceBag>, kg: KnowledgeGraph) -> MultimodalDataset {
    let mut by_pair: HashMap<(&str, &str), Vec<usize>> = HashMap::new();
    for (i, t) in kg.edges().iter().enumerate() {
        by_pair.entry((t.subject.as_str(), t.object.as_str())).or_default().push(i);
    }
    let mut aligned = Vec::new();
    let mut unaligned_bags = Vec::new();
    let mut is_aligned = vec![false; kg.edges().len()];
    for (b, bag) in bags.iter().enumerate() {
        match by_pair.get(&(bag.subject.as_str(), bag.object.as_str())) {
            Some(ts) => {
                for &t in ts {
                    is_aligned[t] = true;
                }
                aligned.push(AlignedPair {
                    bag: b,
                    triplets: ts.clone(),
                });
            }
            None => unaligned_bags.push(b),
        }
    }
    let unaligned_triplets = (0..kg.edges().len()).filter(|&i| !is_aligned[i]).collect();
    drop(by_pair);
    MultimodalDataset {
        bags,
        kg,
        aligned,
        unaligned_triplets,
        unaligned_bags,
    }
}

/// An evaluation example: an ordered pair and its label vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledPair {
    pub subject: String,
    pub object: String,
    pub label: LabelVector,
}

/// Reads labeled pairs from a triplet TSV, grouping relation types per pair.
pub fn load_pairs(path: &Path, vocab: &RelationVocab) -> Result<Vec<LabeledPair>, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    let kg = parse_kg(&text, vocab, &path.display().to_string())?;
    Ok(kg
        .pair_labels()
        .into_iter()
        .map(|((subject, object), label)| LabeledPair { subject, object, label })
        .collect())
}
