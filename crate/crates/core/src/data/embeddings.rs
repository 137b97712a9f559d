//! Initial node embeddings read from a text matrix file.

use std::fmt::Write as _;
use std::path::Path;

use indexmap::IndexMap;

use super::DataError;

/// Per-concept vectors of a common dimension. Concepts missing from the
/// file map to the mean of all vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialEmbeddings {
    dim: usize,
    vectors: IndexMap<String, Vec<f64>>,
    fallback: Vec<f64>,
}

impl InitialEmbeddings {
    pub fn new(dim: usize, vectors: IndexMap<String, Vec<f64>>) -> Result<Self, DataError> {
        if dim == 0 {
            return Err(DataError::Invalid("embedding dimension must be positive".into()));
        }
        let mut fallback = vec![0.0; dim];
        for (cui, v) in &vectors {
            if v.len() != dim {
                return Err(DataError::Invalid(format!("embedding for `{cui}` has length {}, expected {dim}", v.len())));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(DataError::Invalid(format!("embedding for `{cui}` is not finite")));
            }
            for (f, x) in fallback.iter_mut().zip(v) {
                *f += x;
            }
        }
        if !vectors.is_empty() {
            let n = vectors.len() as f64;
            fallback.iter_mut().for_each(|f| *f /= n);
        }
        Ok(InitialEmbeddings { dim, vectors, fallback })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn contains(&self, cui: &str) -> bool {
        self.vectors.contains_key(cui)
    }

    /// Concept ids in file order.
    pub fn nodes(&self) -> impl Iterator<Item = &str> + '_ {
        self.vectors.keys().map(String::as_str)
    }

    pub fn fallback(&self) -> &[f64] {
        &self.fallback
    }

    /// The stored vector, or the mean vector for unknown concepts.
    pub fn get(&self, cui: &str) -> &[f64] {
        self.vectors.get(cui).map(Vec::as_slice).unwrap_or(&self.fallback)
    }

    /// Row-major `nodes.len() × dim` matrix.
    pub fn matrix<'a>(&self, nodes: impl IntoIterator<Item = &'a str>) -> Vec<f64> {
        nodes.into_iter().flat_map(|c| self.get(c).iter().copied()).collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.vectors.len(), self.dim);
        for (cui, v) in &self.vectors {
            s.push_str(cui);
            for x in v {
                let _ = write!(s, " {x}");
            }
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        std::fs::write(path, self.to_text()).map_err(|e| DataError::io(path, e))
    }

    /// Parses a `N d` header followed by N lines of `cui v1 … vd`.
    pub fn parse(text: &str, source: &str) -> Result<Self, DataError> {
        let err = |line: usize, message: String| DataError::Parse {
            file: source.to_string(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| err(1, "missing `N d` header".into()))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        let parse_usize = |s: &str| s.parse::<usize>().ok();
        let (n, dim) = match (h.len(), h.first().and_then(|s| parse_usize(s)), h.get(1).and_then(|s| parse_usize(s))) {
            (2, Some(n), Some(d)) => (n, d),
            _ => return Err(err(1, format!("malformed header `{header}`"))),
        };
        let mut vectors = IndexMap::with_capacity(n);
        for (i, line) in lines {
            let mut fields = line.split_whitespace();
            let cui = fields.next().expect("non-empty line");
            let v: Vec<f64> = fields
                .map(|f| f.parse::<f64>().map_err(|_| err(i + 1, format!("`{f}` is not a number"))))
                .collect::<Result<_, _>>()?;
            if v.len() != dim {
                return Err(err(i + 1, format!("expected {dim} values, got {}", v.len())));
            }
            if vectors.insert(cui.to_string(), v).is_some() {
                return Err(err(i + 1, format!("duplicate concept `{cui}`")));
            }
        }
        if vectors.len() != n {
            return Err(err(1, format!("header declares {n} vectors, file has {}", vectors.len())));
        }
        Self::new(dim, vectors).map_err(|e| err(1, e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }
}
