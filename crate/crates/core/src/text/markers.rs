//! Entity-marker insertion and fixed-length windowing.

use crate::data::tokens::{MarkerRole, MarkerToken, EMPTY_TITLE, SEP};
use crate::data::SentenceRecord;
use crate::error::{Error, Result};

/// A mention `[start, end)` in the unmarked sentence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EntityMention {
    pub start: usize,
    pub end: usize,
    pub role: MarkerRole,
    pub semantic_type: String,
}

/// Sentence with markers inserted, followed by `<sep>` and the title.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MarkedSequence {
    pub tokens: Vec<String>,
    /// Index of the `<sep>` token.
    pub sentence_len: usize,
    pub subj_idx: Vec<usize>,
    pub obj_idx: Vec<usize>,
}

impl MarkedSequence {
    /// The sentence part and title as a bag-file record.
    pub fn to_record(&self) -> SentenceRecord {
        let title = self.tokens.get(self.sentence_len + 1..).unwrap_or(&[]);
        let title = if title == [EMPTY_TITLE] { Vec::new() } else { title.to_vec() };
        SentenceRecord {
            tokens: self.tokens[..self.sentence_len].to_vec(),
            subj_marker_idx: self.subj_idx.clone(),
            obj_marker_idx: self.obj_idx.clone(),
            title,
        }
    }
}

/// Wraps each mention in open/close markers, appends `<sep>` and the title
/// (or `<empty_title>`), then cuts the sequence to `max_len` tokens without
/// splitting any marker pair.
pub fn tokenize_with_markers(
    words: &[String],
    mentions: &[EntityMention],
    title: Option<&[String]>,
    max_len: usize,
) -> Result<MarkedSequence> {
    let mut sorted: Vec<&EntityMention> = mentions.iter().collect();
    sorted.sort_by_key(|m| (m.start, m.end));
    for m in &sorted {
        if m.start >= m.end || m.end > words.len() {
            return Err(Error::Tokenization(format!(
                "mention [{}, {}) outside sentence of {} words",
                m.start,
                m.end,
                words.len()
            )));
        }
    }
    for w in sorted.windows(2) {
        if w[1].start < w[0].end {
            return Err(Error::Tokenization(format!(
                "mentions [{}, {}) and [{}, {}) overlap",
                w[0].start, w[0].end, w[1].start, w[1].end
            )));
        }
    }
    let marker = |m: &EntityMention, open: bool| {
        MarkerToken {
            role: m.role,
            open,
            semantic_type: m.semantic_type.clone(),
        }
        .render()
    };
    let mut tokens = Vec::with_capacity(words.len() + 2 * sorted.len() + 2);
    let (mut subj_idx, mut obj_idx) = (Vec::new(), Vec::new());
    let mut next = sorted.iter().peekable();
    let mut open: Option<&EntityMention> = None;
    for (i, w) in words.iter().enumerate() {
        if let Some(m) = next.next_if(|m| m.start == i) {
            match m.role {
                MarkerRole::Subject => subj_idx.push(tokens.len()),
                MarkerRole::Object => obj_idx.push(tokens.len()),
            }
            tokens.push(marker(m, true));
            open = Some(m);
        }
        tokens.push(w.clone());
        if let Some(m) = open.filter(|m| m.end == i + 1) {
            tokens.push(marker(m, false));
            open = None;
        }
    }
    let sentence_len = tokens.len();
    tokens.push(SEP.to_string());
    match title {
        Some(t) if !t.is_empty() => tokens.extend(t.iter().cloned()),
        _ => tokens.push(EMPTY_TITLE.to_string()),
    }
    let markers: Vec<usize> = tokens[..sentence_len]
        .iter()
        .enumerate()
        .filter(|(_, t)| MarkerToken::parse(t).is_some())
        .map(|(i, _)| i)
        .collect();
    let (start, end) = fit_window(tokens.len(), &markers, max_len)?;
    if start > 0 {
        subj_idx.iter_mut().chain(obj_idx.iter_mut()).for_each(|i| *i -= start);
    }
    let sentence_len = sentence_len.min(end) - start;
    Ok(MarkedSequence {
        tokens: tokens[start..end].to_vec(),
        sentence_len,
        subj_idx,
        obj_idx,
    })
}

/// Window `[start, end)` of at most `max_len` positions covering every
/// marker position. Cuts from the end first, then from the front.
pub fn fit_window(len: usize, markers: &[usize], max_len: usize) -> Result<(usize, usize)> {
    if max_len == 0 {
        return Err(Error::Tokenization("maximum sequence length is zero".into()));
    }
    if len <= max_len {
        return Ok((0, len));
    }
    let (Some(&first), Some(&last)) = (markers.iter().min(), markers.iter().max()) else {
        return Ok((0, max_len));
    };
    if last - first + 1 > max_len {
        return Err(Error::Tokenization(format!(
            "markers span {} positions, more than the maximum length {max_len}",
            last - first + 1
        )));
    }
    let start = (last + 1).saturating_sub(max_len);
    Ok((start, start + max_len))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn mention(start: usize, end: usize, role: MarkerRole) -> EntityMention {
        EntityMention {
            start,
            end,
            role,
            semantic_type: "t047".into(),
        }
    }

    #[test]
    fn marker_precedes_subject() {
        let w = words("Hypobetalipoproteinemia may cause fatty liver");
        let m = [mention(0, 1, MarkerRole::Subject), mention(3, 5, MarkerRole::Object)];
        let s = tokenize_with_markers(&w, &m, None, 512).unwrap();
        assert_eq!(s.subj_idx, vec![0]);
        assert_eq!(s.tokens[0], "<S-t047>");
        assert_eq!(s.tokens[2], "<S-t047/>");
        assert_eq!(s.obj_idx, vec![5]);
        assert_eq!(&s.tokens[5..9], &["<O-t047>", "fatty", "liver", "<O-t047/>"]);
    }

    #[test]
    fn missing_title_gets_placeholder() {
        let s = tokenize_with_markers(&words("a b c"), &[], None, 512).unwrap();
        assert_eq!(&s.tokens[s.tokens.len() - 2..], &[SEP, EMPTY_TITLE]);
        assert!(s.to_record().title.is_empty());
        let t = words("case report");
        let s = tokenize_with_markers(&words("a b c"), &[], Some(&t), 512).unwrap();
        assert_eq!(&s.tokens[3..], &[SEP, "case", "report"]);
    }

    #[test]
    fn no_mentions_is_a_no_op() {
        let s = tokenize_with_markers(&words("a b c"), &[], None, 512).unwrap();
        assert_eq!(&s.tokens[..3], &["a", "b", "c"]);
        assert!(s.subj_idx.is_empty() && s.obj_idx.is_empty());
    }

    #[test]
    fn overlapping_mentions_rejected() {
        let m = [mention(0, 2, MarkerRole::Subject), mention(1, 3, MarkerRole::Object)];
        assert!(matches!(tokenize_with_markers(&words("a b c"), &m, None, 512), Err(Error::Tokenization(_))));
    }

    #[test]
    fn truncation_keeps_marker_pairs() {
        let w = words("x x x x a x b x x x x x");
        let m = [mention(4, 5, MarkerRole::Subject), mention(6, 7, MarkerRole::Object)];
        let s = tokenize_with_markers(&w, &m, None, 8).unwrap();
        assert_eq!(s.tokens.len(), 8);
        assert_eq!(s.tokens[s.subj_idx[0]], "<S-t047>");
        assert_eq!(s.tokens[s.obj_idx[0]], "<O-t047>");
        assert!(s.tokens.contains(&"<O-t047/>".to_string()));
        assert!(tokenize_with_markers(&w, &m, None, 5).is_err());
    }
}
