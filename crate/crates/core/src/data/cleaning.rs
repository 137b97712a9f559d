//! Sentence filtering before bag construction.

use super::bags::SentenceRecord;
use super::tokens::{MarkerRole, MarkerToken};
use super::vocab::{LabelVector, RelationLabel, RelationVocab};

pub const MIN_WORDS: usize = 5;

/// A distantly labeled sentence for the pair (subject, object).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CandidateSentence {
    pub subject: String,
    pub object: String,
    pub label: LabelVector,
    pub sentence: SentenceRecord,
}

impl CandidateSentence {
    /// Tokens that are not entity markers.
    pub fn word_count(&self) -> usize {
        self.sentence.tokens.iter().filter(|t| MarkerToken::parse(t).is_none()).count()
    }

    fn object_first(&self) -> bool {
        match (self.sentence.subj_marker_idx.iter().min(), self.sentence.obj_marker_idx.iter().min()) {
            (Some(s), Some(o)) => o < s,
            _ => false,
        }
    }

    /// Exchanges subject and object, including the marker tokens.
    fn swap_roles(&mut self) {
        std::mem::swap(&mut self.subject, &mut self.object);
        let s = &mut self.sentence;
        std::mem::swap(&mut s.subj_marker_idx, &mut s.obj_marker_idx);
        for t in &mut s.tokens {
            if let Some(mut m) = MarkerToken::parse(t) {
                m.role = match m.role {
                    MarkerRole::Subject => MarkerRole::Object,
                    MarkerRole::Object => MarkerRole::Subject,
                };
                *t = m.render();
            }
        }
    }
}

/// Drops sentences with fewer than five words. A sentence mentioning the
/// object before the subject is rewritten with roles exchanged: symmetric
/// relations and NA keep their label, relations with a declared reverse are
/// moved to it, and relations without one are removed. A sentence left with
/// no relation, having started with one, is dropped.
pub fn clean_sentences(sentences: Vec<CandidateSentence>, vocab: &RelationVocab) -> Vec<CandidateSentence> {
    let mut out = Vec::with_capacity(sentences.len());
    for mut c in sentences {
        if c.word_count() < MIN_WORDS {
            continue;
        }
        if c.object_first() {
            let was_na = c.label.is_na();
            let mut label = LabelVector::zeros(vocab.k());
            for k in (0..vocab.k()).filter(|&k| c.label.get(k)) {
                let l = RelationLabel::Type(k);
                if vocab.is_symmetric(l) {
                    label.set(l);
                } else if let Some(r) = vocab.reverse(l) {
                    label.set(r);
                }
            }
            if !was_na && label.is_na() {
                continue;
            }
            c.label = label;
            c.swap_roles();
        }
        out.push(c);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn candidate(tokens: &[&str], subj: usize, obj: usize, rel: &str) -> CandidateSentence {
        let vocab = RelationVocab::default();
        CandidateSentence {
            subject: "A".into(),
            object: "B".into(),
            label: LabelVector::from_labels(3, [vocab.parse(rel).unwrap()]),
            sentence: SentenceRecord {
                tokens: tokens.iter().map(|s| s.to_string()).collect(),
                subj_marker_idx: vec![subj],
                obj_marker_idx: vec![obj],
                title: vec![],
            },
        }
    }

    const FORWARD: [&str; 11] = ["<S-t>", "flu", "<S-t/>", "may", "cause", "a", "bad", "<O-t>", "fever", "<O-t/>", "."];
    const BACKWARD: [&str; 11] = ["<O-t>", "fever", "<O-t/>", "is", "often", "caused", "by", "<S-t>", "flu", "<S-t/>", "."];

    #[test]
    fn four_word_sentence_removed() {
        let short = candidate(&["<S-t>", "flu", "<S-t/>", "causes", "<O-t>", "fever", "<O-t/>", "."], 0, 4, "MC");
        assert_eq!(short.word_count(), 4);
        assert!(clean_sentences(vec![short], &RelationVocab::default()).is_empty());
    }

    #[test]
    fn forward_sentence_kept_unchanged() {
        let c = candidate(&FORWARD, 0, 7, "MC");
        assert_eq!(clean_sentences(vec![c.clone()], &RelationVocab::default()), vec![c]);
    }

    #[test]
    fn reversed_mc_becomes_mbc_with_roles_swapped() {
        let out = clean_sentences(vec![candidate(&BACKWARD, 7, 0, "MC")], &RelationVocab::default());
        assert_eq!(out.len(), 1);
        let c = &out[0];
        assert_eq!(c.label.flags(), &[0, 0, 1]);
        assert_eq!((c.subject.as_str(), c.object.as_str()), ("B", "A"));
        assert_eq!(c.sentence.subj_marker_idx, vec![0]);
        assert_eq!(c.sentence.tokens[0], "<S-t>");
        assert_eq!(c.sentence.tokens[9], "<O-t/>");
    }

    #[test]
    fn reversed_ddx_keeps_label() {
        let out = clean_sentences(vec![candidate(&BACKWARD, 7, 0, "DDx")], &RelationVocab::default());
        assert_eq!(out[0].label.flags(), &[1, 0, 0]);
    }

    #[test]
    fn reversed_relation_without_reverse_is_dropped() {
        let vocab = RelationVocab::new(vec!["TREATS".into()], "NA").unwrap();
        let mut c = candidate(&BACKWARD, 7, 0, "MC");
        c.label = LabelVector::from_labels(1, [RelationLabel::Type(0)]);
        assert!(clean_sentences(vec![c], &vocab).is_empty());
    }
}
