//! Dictionary-based entity linking by forward maximum matching.

use std::collections::HashMap;
use std::path::Path;

use serde::Serialize;

use super::DataError;

/// Multi-token terms mapped to concept ids.
#[derive(Clone, Debug, Default)]
pub struct Dictionary {
    terms: HashMap<Vec<String>, String>,
    max_len: usize,
}

impl Dictionary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, term: &[&str], cui: &str) {
        if term.is_empty() {
            return;
        }
        self.max_len = self.max_len.max(term.len());
        self.terms.insert(term.iter().map(|s| s.to_string()).collect(), cui.to_string());
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let mut d = Self::new();
        for (term, cui) in pairs {
            let toks: Vec<&str> = term.split_whitespace().collect();
            d.insert(&toks, cui);
        }
        d
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn lookup<S: AsRef<str>>(&self, tokens: &[S]) -> Option<&str> {
        let key: Vec<String> = tokens.iter().map(|s| s.as_ref().to_string()).collect();
        self.terms.get(&key).map(String::as_str)
    }

    /// Reads `term<TAB>cui` lines; the term is split on whitespace.
    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        let mut d = Self::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((term, cui)) = line.split_once('\t') else {
                return Err(DataError::Parse {
                    file: path.display().to_string(),
                    line: n + 1,
                    message: "expected `term<TAB>cui`".into(),
                });
            };
            let toks: Vec<&str> = term.split_whitespace().collect();
            d.insert(&toks, cui.trim());
        }
        Ok(d)
    }
}

/// A matched token span `[start, end)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub cui: String,
}

/// Scans left to right, emitting the longest dictionary match at each
/// position and resuming after it. With `nested`, terms lying strictly
/// inside an emitted span are reported too. Spans are sorted by start, then
/// by decreasing end.
pub fn link_entities<S: AsRef<str>>(text: &[S], dict: &Dictionary, nested: bool) -> Vec<EntitySpan> {
    let n = text.len();
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        let longest = (1..=dict.max_len.min(n - i))
            .rev()
            .find_map(|len| dict.lookup(&text[i..i + len]).map(|c| (len, c)));
        let Some((len, cui)) = longest else {
            i += 1;
            continue;
        };
        out.push(EntitySpan {
            start: i,
            end: i + len,
            cui: cui.to_string(),
        });
        if nested {
            for s in i..i + len {
                for e in s + 1..=i + len {
                    if (s, e) == (i, i + len) {
                        continue;
                    }
                    if let Some(c) = dict.lookup(&text[s..e]) {
                        out.push(EntitySpan {
                            start: s,
                            end: e,
                            cui: c.to_string(),
                        });
                    }
                }
            }
        }
        i += len;
    }
    out.sort_by(|a, b| a.start.cmp(&b.start).then(b.end.cmp(&a.end)));
    out
}
