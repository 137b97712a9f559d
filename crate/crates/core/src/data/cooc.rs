//! Symmetric sparse concept co-occurrence counts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::DataError;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CooccurrenceMatrix {
    entries: BTreeMap<(String, String), u64>,
}

fn key(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

impl CooccurrenceMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets the count for the unordered pair {a, b}.
    pub fn insert(&mut self, a: &str, b: &str, count: u64) {
        self.entries.insert(key(a, b), count);
    }

    /// Count for {a, b}; absent pairs read as 0.
    pub fn get(&self, a: &str, b: &str) -> u64 {
        self.entries.get(&key(a, b)).copied().unwrap_or(0)
    }

    pub fn contains(&self, a: &str, b: &str) -> bool {
        self.entries.contains_key(&key(a, b))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Stored entries in canonical (smaller id first) order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, u64)> + '_ {
        self.entries.iter().map(|((a, b), &c)| (a.as_str(), b.as_str(), c))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (a, b, c) in self.iter() {
            let _ = writeln!(s, "{a} {b} {c}");
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        std::fs::write(path, self.to_text()).map_err(|e| DataError::io(path, e))
    }

    /// Parses `cui_a cui_b count` lines. A pair listed twice (in either
    /// orientation) must carry the same count.
    pub fn parse(text: &str, source: &str) -> Result<Self, DataError> {
        let mut m = CooccurrenceMatrix::new();
        for (n, line) in text.lines().enumerate() {
            let err = |message: String| DataError::Parse {
                file: source.to_string(),
                line: n + 1,
                message,
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() || fields[0].starts_with('#') {
                continue;
            }
            if fields.len() != 3 {
                return Err(err(format!("expected `cui_a cui_b count`, got {} fields", fields.len())));
            }
            let count: u64 = fields[2]
                .parse()
                .map_err(|_| err(format!("count `{}` is not a non-negative integer", fields[2])))?;
            if let Some(&prev) = m.entries.get(&key(fields[0], fields[1])) {
                if prev != count {
                    return Err(err(format!("asymmetric counts {prev} and {count} for one pair")));
                }
            }
            m.insert(fields[0], fields[1], count);
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }
}
