//! Pluggable token counting.
//!
//! Chunk sizes and context budgets are all expressed in tokenizer units.
//! The default splits on whitespace, which keeps every count reproducible
//! without model-specific vocabularies; swap in another implementation if
//! budgets must match a provider's tokenizer.

/// Contract for anything that splits text into countable tokens.
pub trait Tokenizer: Send + Sync {
    fn tokenize<'a>(&self, text: &'a str) -> Vec<&'a str>;

    fn count(&self, text: &str) -> usize {
        self.tokenize(text).len()
    }

    /// First `limit` tokens re-joined with single spaces.
    fn truncate(&self, text: &str, limit: usize) -> String {
        let toks = self.tokenize(text);
        toks[..toks.len().min(limit)].join(" ")
    }
}

/// Whitespace-delimited tokens; the default everywhere.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn tokenize<'a>(&self, text: &'a str) -> Vec<&'a str> {
        text.split_whitespace().collect()
    }
}
