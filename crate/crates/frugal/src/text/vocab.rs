//! Fixed vocabulary with reserved special tokens.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const CLS_ID: u32 = 0;
pub const SEP_ID: u32 = 1;
pub const MASK_ID: u32 = 2;
pub const UNK_ID: u32 = 3;
pub const PAD_ID: u32 = 4;

pub const SPECIAL_TOKENS: [&str; 5] = ["[CLS]", "[SEP]", "[MASK]", "[UNK]", "[PAD]"];

/// Token to id map. Ids 0..=4 are the special tokens, in the fixed order
/// `[CLS] [SEP] [MASK] [UNK] [PAD]`; regular tokens start at id 5.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Build from an iterator of regular tokens. Duplicates are dropped and
    /// tokens are sorted so the id assignment depends only on the token set.
    pub fn from_tokens(iter: impl IntoIterator<Item = String>) -> Self {
        let mut uniq: Vec<String> = iter
            .into_iter()
            .filter(|t| !SPECIAL_TOKENS.contains(&t.as_str()))
            .collect();
        uniq.sort_unstable();
        uniq.dedup();
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        tokens.extend(uniq);
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self { tokens, index }
    }

    /// Build from raw text, one vocabulary entry per surface token.
    pub fn from_corpus_text(text: &str) -> Self {
        Self::from_tokens(super::split_tokens(text))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // the specials are always present
    }

    pub fn max_id(&self) -> u32 {
        (self.tokens.len() - 1) as u32
    }

    pub fn id_of(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.id_of(token).unwrap_or(UNK_ID)
    }

    pub fn token_of(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(|s| s.as_str())
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Ids eligible as random replacement tokens: regular tokens minus the
    /// sentence delimiters, so random insertions cannot change the sentence
    /// segmentation.
    pub fn replacement_pool(&self) -> Vec<u32> {
        (PAD_ID + 1..=self.max_id())
            .filter(|&id| !matches!(self.token_of(id), Some(".") | Some("!") | Some("?")))
            .collect()
    }

    /// Write one token per line; the line number is the id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        for token in &self.tokens {
            writeln!(buf, "{token}")?;
        }
        crate::util::atomic_write(path, &buf)
    }

    /// Load a vocabulary file, validating the fixed special-token header.
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Load(format!("cannot open vocabulary {}: {e}", path.display())))?;
        let mut tokens = Vec::new();
        for line in BufReader::new(file).lines() {
            tokens.push(line?);
        }
        if tokens.len() < SPECIAL_TOKENS.len() {
            return Err(Error::Load("vocabulary file shorter than the special-token header".into()));
        }
        for (i, expected) in SPECIAL_TOKENS.iter().enumerate() {
            if tokens[i] != *expected {
                return Err(Error::Load(format!(
                    "vocabulary line {i} must be {expected:?}, found {:?}",
                    tokens[i]
                )));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Load(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specials_have_fixed_ids() {
        let v = Vocabulary::from_tokens(std::iter::empty());
        assert_eq!(v.id_of("[CLS]"), Some(CLS_ID));
        assert_eq!(v.id_of("[SEP]"), Some(SEP_ID));
        assert_eq!(v.id_of("[MASK]"), Some(MASK_ID));
        assert_eq!(v.id_of("[UNK]"), Some(UNK_ID));
        assert_eq!(v.id_of("[PAD]"), Some(PAD_ID));
        assert_eq!(v.len(), 5);
    }

    #[test]
    fn ids_depend_only_on_token_set() {
        let a = Vocabulary::from_tokens(["b", "a", "c"].map(String::from));
        let b = Vocabulary::from_tokens(["c", "b", "a", "a"].map(String::from));
        assert_eq!(a.tokens(), b.tokens());
    }

    #[test]
    fn save_load_round_trip() {
        let v = Vocabulary::from_tokens(["delta", "echo"].map(String::from));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        v.save(&path).unwrap();
        let loaded = Vocabulary::load(&path).unwrap();
        assert_eq!(loaded.tokens(), v.tokens());
    }

    #[test]
    fn load_rejects_bad_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        std::fs::write(&path, "[CLS]\n[SEP]\nbroken\n[UNK]\n[PAD]\n").unwrap();
        let err = Vocabulary::load(&path).unwrap_err();
        assert_eq!(err.kind(), "LoadError");
    }

    #[test]
    fn replacement_pool_excludes_delimiters_and_specials() {
        let v = Vocabulary::from_tokens(["x", ".", "!", "?", "y"].map(String::from));
        let pool = v.replacement_pool();
        assert!(!pool.is_empty());
        for id in pool {
            let t = v.token_of(id).unwrap();
            assert!(!matches!(t, "." | "!" | "?"));
            assert!(!t.starts_with('['));
        }
    }
}
