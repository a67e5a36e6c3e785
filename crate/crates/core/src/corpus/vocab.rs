//! Word-level tokenizer and vocabulary.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

/// Reserved token ids.
pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const SOS: usize = 2;
pub const EOS: usize = 3;
pub const CTX: usize = 4;

const SPECIALS: [&str; 5] = ["<pad>", "<unk>", "<sos>", "<eos>", "<ctx>"];

/// Lowercases, keeps alphanumeric runs together, and splits every other
/// non-whitespace character into its own token. The special markers can never
/// come out of this (angle brackets always split), and the output is
/// idempotent: retokenizing the tokens joined by spaces is a fixed point.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.to_lowercase().chars() {
        if ch.is_alphanumeric() {
            cur.push(ch);
        } else {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            if !ch.is_whitespace() {
                out.push(ch.to_string());
            }
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocab {
    /// A vocabulary holding only the five specials.
    pub fn new() -> Self {
        let tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab { tokens, ids }
    }

    /// Id for `tok`, inserting it if new (corpus-build mode).
    pub fn add_or_get(&mut self, tok: &str) -> usize {
        if let Some(&id) = self.ids.get(tok) {
            return id;
        }
        self.tokens.push(tok.to_string());
        self.ids.insert(tok.to_string(), self.tokens.len() - 1);
        self.tokens.len() - 1
    }

    /// Id for `tok`, or UNK if absent (reuse mode).
    pub fn lookup(&self, tok: &str) -> usize {
        self.ids.get(tok).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, tok: &str) -> bool {
        self.ids.contains_key(tok)
    }

    /// Token string for an id; UNK's text for out-of-range ids.
    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map(String::as_str).unwrap_or(SPECIALS[UNK])
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // the specials are always present
    }

    pub fn is_special(id: usize) -> bool {
        id < SPECIALS.len()
    }
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab { tokens, ids }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}
