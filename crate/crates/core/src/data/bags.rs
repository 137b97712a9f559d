//! Sentence bags: one JSON record per line.
//!
//! ```text
//! {"subject":"C01","object":"C02","relations":["MC"],
//!  "sentences":[{"tokens":["<S-t047>","ent1","<S-t047/>","causes","<O-t047>","ent2","<O-t047/>"],
//!                "subj_marker_idx":[0],"obj_marker_idx":[4],"title":["case","report"]}]}
//! ```
//!
//! Marker indices must address open marker tokens of the matching role.
//! Records sharing a (subject, object) pair are merged into one bag.

use std::fmt::Write as _;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::tokens::{MarkerRole, TokenTable};
use super::vocab::{LabelVector, RelationVocab};
use super::DataError;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SentenceRecord {
    pub tokens: Vec<String>,
    pub subj_marker_idx: Vec<usize>,
    pub obj_marker_idx: Vec<usize>,
    #[serde(default)]
    pub title: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BagRecord {
    pub subject: String,
    pub object: String,
    pub relations: Vec<String>,
    pub sentences: Vec<SentenceRecord>,
}

/// A tokenized sentence with subject/object open-marker positions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<u32>,
    pub subj_markers: Vec<usize>,
    pub obj_markers: Vec<usize>,
    pub title: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SentenceBag {
    pub subject: String,
    pub object: String,
    pub label: LabelVector,
    pub sentences: Vec<Sentence>,
}

impl SentenceBag {
    pub fn size(&self) -> usize {
        self.sentences.len()
    }

    pub fn pair(&self) -> (&str, &str) {
        (&self.subject, &self.object)
    }

    pub fn to_record(&self, vocab: &RelationVocab, table: &TokenTable) -> BagRecord {
        let words = |ids: &[u32]| ids.iter().map(|&t| table.token(t).to_string()).collect();
        BagRecord {
            subject: self.subject.clone(),
            object: self.object.clone(),
            relations: self.label.names(vocab),
            sentences: self
                .sentences
                .iter()
                .map(|s| SentenceRecord {
                    tokens: words(&s.tokens),
                    subj_marker_idx: s.subj_markers.clone(),
                    obj_marker_idx: s.obj_markers.clone(),
                    title: words(&s.title),
                })
                .collect(),
        }
    }
}

/// Interns and validates one sentence record. Errors carry the position only
/// through the returned message; callers attach bag/sentence coordinates.
pub fn intern_sentence(rec: &SentenceRecord, table: &mut TokenTable) -> Result<Sentence, String> {
    let tokens: Vec<u32> = rec.tokens.iter().map(|t| table.intern(t)).collect();
    let title: Vec<u32> = rec.title.iter().map(|t| table.intern(t)).collect();
    validate_markers(&tokens, &rec.subj_marker_idx, MarkerRole::Subject, table)?;
    validate_markers(&tokens, &rec.obj_marker_idx, MarkerRole::Object, table)?;
    Ok(Sentence {
        tokens,
        subj_markers: rec.subj_marker_idx.clone(),
        obj_markers: rec.obj_marker_idx.clone(),
        title,
    })
}

fn validate_markers(tokens: &[u32], idx: &[usize], role: MarkerRole, table: &TokenTable) -> Result<(), String> {
    let name = match role {
        MarkerRole::Subject => "subject",
        MarkerRole::Object => "object",
    };
    if idx.is_empty() {
        return Err(format!("no {name} marker"));
    }
    for &i in idx {
        let Some(&tok) = tokens.get(i) else {
            return Err(format!("{name} marker index {i} out of range for {} tokens", tokens.len()));
        };
        if !table.is_open_marker(tok, role) {
            return Err(format!("{name} marker index {i} addresses `{}`, not an open {name} marker", table.token(tok)));
        }
    }
    Ok(())
}

pub fn parse_bags(
    text: &str,
    vocab: &RelationVocab,
    table: &mut TokenTable,
    source: &str,
) -> Result<Vec<SentenceBag>, DataError> {
    let mut merged: IndexMap<(String, String), SentenceBag> = IndexMap::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: BagRecord = serde_json::from_str(line).map_err(|e| DataError::Parse {
            file: source.to_string(),
            line: line_no,
            message: e.to_string(),
        })?;
        let invalid = |sentence: usize, message: String| DataError::Validation {
            file: source.to_string(),
            bag: line_no,
            sentence,
            message,
        };
        if rec.sentences.is_empty() {
            return Err(invalid(0, "bag has no sentences".into()));
        }
        if rec.relations.is_empty() {
            return Err(invalid(0, "bag has no relations".into()));
        }
        let mut label = LabelVector::zeros(vocab.k());
        for r in &rec.relations {
            let l = vocab.parse(r).map_err(|_| DataError::UnknownRelation {
                file: source.to_string(),
                line: line_no,
                name: r.clone(),
            })?;
            label.set(l);
        }
        let mut sentences = Vec::with_capacity(rec.sentences.len());
        for (j, s) in rec.sentences.iter().enumerate() {
            sentences.push(intern_sentence(s, table).map_err(|m| invalid(j, m))?);
        }
        match merged.entry((rec.subject.clone(), rec.object.clone())) {
            indexmap::map::Entry::Occupied(mut e) => {
                let bag = e.get_mut();
                bag.label.union(&label);
                bag.sentences.extend(sentences);
            }
            indexmap::map::Entry::Vacant(e) => {
                e.insert(SentenceBag {
                    subject: rec.subject,
                    object: rec.object,
                    label,
                    sentences,
                });
            }
        }
    }
    Ok(merged.into_values().collect())
}

pub fn load_bags(path: &Path, vocab: &RelationVocab, table: &mut TokenTable) -> Result<Vec<SentenceBag>, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    parse_bags(&text, vocab, table, &path.display().to_string())
}

pub fn bags_to_jsonl(bags: &[SentenceBag], vocab: &RelationVocab, table: &TokenTable) -> String {
    let mut out = String::new();
    for b in bags {
        let line = serde_json::to_string(&b.to_record(vocab, table)).expect("bag records serialize");
        let _ = writeln!(out, "{line}");
    }
    out
}

pub fn write_bags(path: &Path, bags: &[SentenceBag], vocab: &RelationVocab, table: &TokenTable) -> Result<(), DataError> {
    std::fs::write(path, bags_to_jsonl(bags, vocab, table)).map_err(|e| DataError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(relations: &[&str], subj: Vec<usize>, obj: Vec<usize>) -> String {
        let rec = BagRecord {
            subject: "A".into(),
            object: "B".into(),
            relations: relations.iter().map(|s| s.to_string()).collect(),
            sentences: vec![SentenceRecord {
                tokens: ["<S-t047>", "fever", "<S-t047/>", "may", "cause", "a", "<O-t047/>", "<O-t047>", "rash", "<O-t047/>"]
                    .iter()
                    .map(|s| s.to_string())
                    .collect(),
                subj_marker_idx: subj,
                obj_marker_idx: obj,
                title: vec![],
            }],
        };
        serde_json::to_string(&rec).unwrap()
    }

    fn parse(text: &str) -> Result<Vec<SentenceBag>, DataError> {
        parse_bags(text, &RelationVocab::default(), &mut TokenTable::new(), "t")
    }

    #[test]
    fn one_hot_and_na_labels() {
        let b = parse(&record(&["MC"], vec![0], vec![7])).unwrap();
        assert_eq!(b[0].label.flags(), &[0, 1, 0]);
        let b = parse(&record(&["NA"], vec![0], vec![7])).unwrap();
        assert!(b[0].label.is_na());
    }

    #[test]
    fn marker_indices_stored_verbatim() {
        let b = parse(&record(&["MC"], vec![0], vec![7])).unwrap();
        assert_eq!(b[0].sentences[0].subj_markers, vec![0]);
        assert_eq!(b[0].sentences[0].obj_markers, vec![7]);
    }

    #[test]
    fn bad_markers_are_rejected_with_coordinates() {
        for (subj, obj) in [(vec![0], vec![42]), (vec![0], vec![6]), (vec![7], vec![7]), (vec![0], vec![])] {
            match parse(&record(&["MC"], subj, obj)) {
                Err(DataError::Validation { bag, sentence, .. }) => assert_eq!((bag, sentence), (1, 0)),
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn unknown_relation_is_vocabulary_error() {
        assert!(matches!(
            parse(&record(&["TREATS"], vec![0], vec![7])),
            Err(DataError::UnknownRelation { .. })
        ));
    }

    #[test]
    fn same_pair_records_merge() {
        let text = format!("{}\n{}\n", record(&["MC"], vec![0], vec![7]), record(&["DDx"], vec![0], vec![7]));
        let b = parse(&text).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].size(), 2);
        assert_eq!(b[0].label.flags(), &[1, 1, 0]);
    }

    #[test]
    fn jsonl_round_trip() {
        let vocab = RelationVocab::default();
        let mut table = TokenTable::new();
        let bags = parse_bags(&record(&["MBC"], vec![0], vec![7]), &vocab, &mut table, "t").unwrap();
        let text = bags_to_jsonl(&bags, &vocab, &table);
        let again = parse_bags(&text, &vocab, &mut table, "t").unwrap();
        assert_eq!(bags, again);
    }
}
