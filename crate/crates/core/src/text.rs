//! Word-level tokenizer used wherever text must be turned into token ids.

use sha2::{Digest, Sha256};

pub use crate::cache::TokenId;

/// One token per whitespace-separated word; ids come from a stable digest so
/// identical words always map to identical ids.
pub fn tokenize(text: &str) -> Vec<TokenId> {
    text.split_whitespace().map(word_id).collect()
}

pub fn token_count(text: &str) -> usize {
    text.split_whitespace().count()
}

fn word_id(word: &str) -> TokenId {
    let digest = Sha256::digest(word.as_bytes());
    u32::from_le_bytes([digest[0], digest[1], digest[2], digest[3]])
}
