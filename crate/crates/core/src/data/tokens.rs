//! Token table shared by the bag loader and the text encoder.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const SEP: &str = "<sep>";
pub const EMPTY_TITLE: &str = "<empty_title>";

/// Role of an entity marker token.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MarkerRole {
    Subject,
    Object,
}

/// Decoded form of a marker token such as `<S-t047>` or `<O-t047/>`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MarkerToken {
    pub role: MarkerRole,
    pub open: bool,
    pub semantic_type: String,
}

impl MarkerToken {
    pub fn parse(token: &str) -> Option<MarkerToken> {
        let inner = token.strip_prefix('<')?.strip_suffix('>')?;
        let (inner, open) = match inner.strip_suffix('/') {
            Some(s) => (s, false),
            None => (inner, true),
        };
        let (role, ty) = if let Some(t) = inner.strip_prefix("S-") {
            (MarkerRole::Subject, t)
        } else if let Some(t) = inner.strip_prefix("O-") {
            (MarkerRole::Object, t)
        } else {
            return None;
        };
        if ty.is_empty() || ty.contains(['<', '>', '/']) {
            return None;
        }
        Some(MarkerToken {
            role,
            open,
            semantic_type: ty.to_string(),
        })
    }

    pub fn render(&self) -> String {
        let r = match self.role {
            MarkerRole::Subject => 'S',
            MarkerRole::Object => 'O',
        };
        let close = if self.open { "" } else { "/" };
        format!("<{r}-{}{close}>", self.semantic_type)
    }
}

/// String ↔ id mapping. Ids 0–3 are the pad, unknown, separator and
/// empty-title tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct TokenTable {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    frozen: bool,
}

impl Default for TokenTable {
    fn default() -> Self {
        Self::new()
    }
}

impl From<Vec<String>> for TokenTable {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        TokenTable {
            tokens,
            index,
            frozen: true,
        }
    }
}

impl From<TokenTable> for Vec<String> {
    fn from(t: TokenTable) -> Self {
        t.tokens
    }
}

impl TokenTable {
    pub fn new() -> Self {
        let mut t = TokenTable {
            tokens: Vec::new(),
            index: HashMap::new(),
            frozen: false,
        };
        for s in [PAD, UNK, SEP, EMPTY_TITLE] {
            t.intern(s);
        }
        t
    }

    /// Stops growth; unseen tokens map to `<unk>` afterwards.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn unfreeze(&mut self) {
        self.frozen = false;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn intern(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        if self.frozen {
            return self.index[UNK];
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn sep(&self) -> u32 {
        self.index[SEP]
    }

    pub fn empty_title(&self) -> u32 {
        self.index[EMPTY_TITLE]
    }

    pub fn marker(&self, id: u32) -> Option<MarkerToken> {
        self.tokens.get(id as usize).and_then(|t| MarkerToken::parse(t))
    }

    pub fn is_open_marker(&self, id: u32, role: MarkerRole) -> bool {
        self.marker(id).is_some_and(|m| m.open && m.role == role)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}
