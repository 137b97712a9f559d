//! Relation vocabulary and label vectors.

use serde::{Deserialize, Serialize};

use super::DataError;

/// A relation name resolved against a [`RelationVocab`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RelationLabel {
    /// Index into the scored relation types.
    Type(usize),
    /// The absence label.
    Na,
}

/// The scored relation types plus the name of the absence label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationVocab {
    scored: Vec<String>,
    na_name: String,
    /// Unordered pairs of mutually reverse relation types.
    reverses: Vec<(String, String)>,
    /// Relation types that hold in both directions.
    symmetric: Vec<String>,
}

impl Default for RelationVocab {
    fn default() -> Self {
        RelationVocab {
            scored: vec!["DDx".into(), "MC".into(), "MBC".into()],
            na_name: "NA".into(),
            reverses: vec![("MC".into(), "MBC".into())],
            symmetric: vec!["DDx".into()],
        }
    }
}

impl RelationVocab {
    pub fn new(scored: Vec<String>, na_name: impl Into<String>) -> Result<Self, DataError> {
        let na_name = na_name.into();
        if scored.is_empty() {
            return Err(DataError::Vocabulary("at least one scored relation type is required".into()));
        }
        for (i, name) in scored.iter().enumerate() {
            if scored[..i].contains(name) {
                return Err(DataError::Vocabulary(format!("duplicate relation type `{name}`")));
            }
        }
        if scored.contains(&na_name) {
            return Err(DataError::Vocabulary(format!("absence label `{na_name}` is also a scored type")));
        }
        Ok(RelationVocab {
            scored,
            na_name,
            reverses: Vec::new(),
            symmetric: Vec::new(),
        })
    }

    /// Declares `a` and `b` as reverses of each other.
    pub fn with_reverse(mut self, a: &str, b: &str) -> Result<Self, DataError> {
        self.index(a)?;
        self.index(b)?;
        self.reverses.push((a.to_string(), b.to_string()));
        Ok(self)
    }

    pub fn with_symmetric(mut self, a: &str) -> Result<Self, DataError> {
        self.index(a)?;
        self.symmetric.push(a.to_string());
        Ok(self)
    }

    /// Number of scored types, K.
    pub fn k(&self) -> usize {
        self.scored.len()
    }

    pub fn scored(&self) -> &[String] {
        &self.scored
    }

    pub fn na_name(&self) -> &str {
        &self.na_name
    }

    pub fn name(&self, label: RelationLabel) -> &str {
        match label {
            RelationLabel::Type(i) => &self.scored[i],
            RelationLabel::Na => &self.na_name,
        }
    }

    pub fn index(&self, name: &str) -> Result<usize, DataError> {
        self.scored
            .iter()
            .position(|s| s == name)
            .ok_or_else(|| DataError::Vocabulary(format!("unknown relation type `{name}`")))
    }

    pub fn parse(&self, name: &str) -> Result<RelationLabel, DataError> {
        if name == self.na_name {
            Ok(RelationLabel::Na)
        } else {
            self.index(name).map(RelationLabel::Type)
        }
    }

    pub fn is_symmetric(&self, label: RelationLabel) -> bool {
        match label {
            RelationLabel::Type(i) => self.symmetric.iter().any(|s| *s == self.scored[i]),
            RelationLabel::Na => true,
        }
    }

    /// The reverse relation type, if one is declared.
    pub fn reverse(&self, label: RelationLabel) -> Option<RelationLabel> {
        let RelationLabel::Type(i) = label else { return None };
        let name = &self.scored[i];
        self.reverses.iter().find_map(|(a, b)| {
            if a == name {
                self.index(b).ok().map(RelationLabel::Type)
            } else if b == name {
                self.index(a).ok().map(RelationLabel::Type)
            } else {
                None
            }
        })
    }
}

/// K binary flags, one per scored relation type. The absence label maps to
/// the all-zero vector.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelVector(Vec<u8>);

impl LabelVector {
    pub fn zeros(k: usize) -> Self {
        LabelVector(vec![0; k])
    }

    pub fn from_labels(k: usize, labels: impl IntoIterator<Item = RelationLabel>) -> Self {
        let mut v = Self::zeros(k);
        for l in labels {
            v.set(l);
        }
        v
    }

    pub fn set(&mut self, label: RelationLabel) {
        if let RelationLabel::Type(i) = label {
            self.0[i] = 1;
        }
    }

    pub fn get(&self, k: usize) -> bool {
        self.0[k] == 1
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_na(&self) -> bool {
        self.0.iter().all(|&f| f == 0)
    }

    pub fn flags(&self) -> &[u8] {
        &self.0
    }

    pub fn union(&mut self, other: &LabelVector) {
        for (a, &b) in self.0.iter_mut().zip(&other.0) {
            *a |= b;
        }
    }

    /// Names of the set flags, or the absence label when none are set.
    pub fn names(&self, vocab: &RelationVocab) -> Vec<String> {
        if self.is_na() {
            return vec![vocab.na_name().to_string()];
        }
        (0..self.len())
            .filter(|&k| self.get(k))
            .map(|k| vocab.scored()[k].clone())
            .collect()
    }
}
