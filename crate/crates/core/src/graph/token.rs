use serde::{Deserialize, Serialize};

use crate::cache::SequenceHandle;

/// Where a history entry came from.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", tag = "kind", content = "id")]
pub enum Origin {
    /// Seeded into an initially marked place.
    Initial(String),
    /// Produced by firing the named transition.
    Step(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct HistoryEntry {
    pub origin: Origin,
    pub text: String,
    pub token_count: usize,
}

/// Colored token `(history, cache refs)`.
///
/// `cache_refs[i]` materializes exactly the token ids of `history[i]`, so the
/// concatenation of the refs reproduces the token stream of the history.
/// Handles are shared by identity between tokens; the run that created them
/// releases them once.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SemanticToken {
    pub history: Vec<HistoryEntry>,
    pub cache_refs: Vec<SequenceHandle>,
    /// Position index the next generated token takes.
    pub next_position: usize,
}

impl SemanticToken {
    pub fn empty() -> Self {
        Self::default()
    }

    /// A token seeded with an initial context entry already stored in the cache.
    pub fn seeded(place: &str, text: impl Into<String>, handle: SequenceHandle, token_count: usize) -> Self {
        Self {
            history: vec![HistoryEntry {
                origin: Origin::Initial(place.to_string()),
                text: text.into(),
                token_count,
            }],
            cache_refs: vec![handle],
            next_position: token_count,
        }
    }

    pub fn token_count(&self) -> usize {
        self.history.iter().map(|e| e.token_count).sum()
    }

    /// History texts joined by newlines; the context string handed to producers.
    pub fn context_text(&self) -> String {
        let mut out = String::new();
        for (i, entry) in self.history.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            out.push_str(&entry.text);
        }
        out
    }

    pub fn text_of(&self, origin: &Origin) -> Option<&str> {
        self.history
            .iter()
            .find(|e| &e.origin == origin)
            .map(|e| e.text.as_str())
    }
}
