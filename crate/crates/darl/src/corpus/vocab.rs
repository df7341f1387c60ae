//! Token vocabulary with three reserved ids ahead of all content tokens.
//!
//! On disk a vocabulary is one content token per line; the line number (from
//! zero) is the token's id minus 3. Reserved ids never have a surface form
//! in the file.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const START: u32 = 0;
pub const EOS: u32 = 1;
pub const UNK: u32 = 2;
/// Number of reserved ids preceding content tokens.
pub const RESERVED: u32 = 3;

#[derive(Clone, Debug)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Builds a vocabulary from content tokens in order. Tokens must be
    /// non-empty, lowercase, free of whitespace, and unique.
    pub fn new<I, S>(tokens: I) -> Result<Vocab>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut list: Vec<String> = Vec::new();
        let mut index = HashMap::new();
        for tok in tokens {
            let tok = tok.into();
            if tok.is_empty() || tok.chars().any(|c| c.is_whitespace()) {
                return Err(Error::InvalidArgument(format!("bad vocabulary token {tok:?}")));
            }
            if tok.chars().any(|c| c.is_uppercase()) {
                return Err(Error::InvalidArgument(format!(
                    "vocabulary token {tok:?} is not lowercase"
                )));
            }
            if index.contains_key(&tok) {
                return Err(Error::InvalidArgument(format!("duplicate vocabulary token {tok:?}")));
            }
            index.insert(tok.clone(), RESERVED + list.len() as u32);
            list.push(tok);
        }
        Ok(Vocab { tokens: list, index })
    }

    /// Total id count including the three reserved ids.
    pub fn size(&self) -> usize {
        self.tokens.len() + RESERVED as usize
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    /// Surface form of a content id; reserved and out-of-range ids yield None.
    pub fn token(&self, id: u32) -> Option<&str> {
        if id < RESERVED {
            return None;
        }
        self.tokens.get((id - RESERVED) as usize).map(|s| s.as_str())
    }

    pub fn is_reserved(id: u32) -> bool {
        id < RESERVED
    }

    /// Encodes words to ids, mapping unknown words to UNK. Returns the ids
    /// and how many words were unknown.
    pub fn encode(&self, words: &[&str]) -> (Vec<u32>, usize) {
        let mut unknown = 0;
        let ids = words
            .iter()
            .map(|w| {
                self.id(w).unwrap_or_else(|| {
                    unknown += 1;
                    UNK
                })
            })
            .collect();
        (ids, unknown)
    }

    /// Renders ids as words. Reserved ids get bracketed placeholders, which
    /// can never collide with content tokens (those reject `<`/`>` via the
    /// whitespace/lowercase rules in practice and never start with `<` in the
    /// builtin worlds); out-of-range ids are an error.
    pub fn render(&self, ids: &[u32]) -> Result<Vec<String>> {
        ids.iter()
            .map(|&id| match id {
                START => Ok("<start>".to_string()),
                EOS => Ok("<eos>".to_string()),
                UNK => Ok("<unk>".to_string()),
                _ => self
                    .token(id)
                    .map(str::to_string)
                    .ok_or_else(|| Error::InvalidArgument(format!("id {id} out of vocabulary"))),
            })
            .collect()
    }

    pub fn content_tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut body = self.tokens.join("\n");
        if !body.is_empty() {
            body.push('\n');
        }
        std::fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Vocab> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut tokens = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let tok = line.trim_end_matches('\r');
            if tok.is_empty() {
                return Err(Error::format(path, format!("empty token at line {}", lineno + 1)));
            }
            tokens.push(tok.to_string());
        }
        Vocab::new(tokens).map_err(|e| Error::format(path, e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_start_after_reserved_block() {
        let v = Vocab::new(["alpha", "beta"]).unwrap();
        assert_eq!(v.size(), 5);
        assert_eq!(v.id("alpha"), Some(3));
        assert_eq!(v.id("beta"), Some(4));
        assert_eq!(v.token(3), Some("alpha"));
        assert_eq!(v.token(0), None);
        assert_eq!(v.token(99), None);
    }

    #[test]
    fn duplicates_and_malformed_tokens_are_rejected() {
        assert!(Vocab::new(["a", "a"]).is_err());
        assert!(Vocab::new(["has space"]).is_err());
        assert!(Vocab::new([""]).is_err());
        assert!(Vocab::new(["Upper"]).is_err());
    }

    #[test]
    fn encode_counts_unknown_words() {
        let v = Vocab::new(["alpha", "beta"]).unwrap();
        let (ids, unk) = v.encode(&["alpha", "gamma", "beta", "delta"]);
        assert_eq!(ids, vec![3, UNK, 4, UNK]);
        assert_eq!(unk, 2);
    }

    #[test]
    fn render_uses_placeholders_for_reserved_ids() {
        let v = Vocab::new(["alpha"]).unwrap();
        let words = v.render(&[START, 3, EOS, UNK]).unwrap();
        assert_eq!(words, vec!["<start>", "alpha", "<eos>", "<unk>"]);
        assert!(v.render(&[42]).is_err());
    }

    #[test]
    fn file_round_trip_preserves_line_number_id_mapping() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let v = Vocab::new(["one", "two", "three"]).unwrap();
        v.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "one\ntwo\nthree\n");
        let loaded = Vocab::load(&path).unwrap();
        assert_eq!(loaded.id("one"), Some(3));
        assert_eq!(loaded.id("three"), Some(5));
        assert_eq!(loaded.size(), v.size());
    }

    #[test]
    fn loading_rejects_blank_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        std::fs::write(&path, "one\n\ntwo\n").unwrap();
        assert!(Vocab::load(&path).is_err());
    }
}
