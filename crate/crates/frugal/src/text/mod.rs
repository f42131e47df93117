//! Tokenization, sentence splitting, IDF statistics, and the denoising
//! perturbation primitives.

mod idf;
mod perturb;
mod vocab;

pub use idf::{compute_idf, IdfTable};
pub use perturb::{perturb, perturb_with_stats, pseudo_reconstruct, PerturbStats, PerturbationParams};
pub use vocab::{Vocabulary, CLS_ID, MASK_ID, PAD_ID, SEP_ID, UNK_ID};

use crate::error::{Error, Result};
use crate::types::TokenSequence;

/// Split raw text into lowercased surface tokens. Alphanumeric runs form one
/// token; every other non-whitespace character is a token of its own.
pub fn split_tokens(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            for lc in ch.to_lowercase() {
                current.push(lc);
            }
        } else {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            if !ch.is_whitespace() {
                tokens.push(ch.to_string());
            }
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Tokenize `text` against `vocab`. Out-of-vocabulary tokens map to `[UNK]`.
pub fn tokenize(text: &str, vocab: &Vocabulary) -> Result<TokenSequence> {
    let tokens = split_tokens(text);
    if tokens.is_empty() {
        return Err(Error::EmptyInput("text has no tokens".into()));
    }
    let ids = tokens.iter().map(|t| vocab.id_or_unk(t)).collect();
    Ok(TokenSequence::new(tokens, ids))
}

/// Split text into sentences on `.`, `!`, `?` followed by whitespace or end
/// of input. Delimiters stay attached to their sentence. Text without any
/// delimiter is a single sentence.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut sentences = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        let ch = chars[i];
        if matches!(ch, '.' | '!' | '?') {
            let at_end = i + 1 == chars.len();
            let before_space = !at_end && chars[i + 1].is_whitespace();
            if at_end || before_space {
                let sentence: String = chars[start..=i].iter().collect();
                let trimmed = sentence.trim();
                if !trimmed.is_empty() {
                    sentences.push(trimmed.to_string());
                }
                start = i + 1;
            }
        }
        i += 1;
    }
    if start < chars.len() {
        let tail: String = chars[start..].iter().collect();
        let trimmed = tail.trim();
        if !trimmed.is_empty() {
            sentences.push(trimmed.to_string());
        }
    }
    if sentences.is_empty() && !text.trim().is_empty() {
        sentences.push(text.trim().to_string());
    }
    sentences
}
