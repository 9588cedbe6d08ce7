//! Tokenization, vocabulary building, and encoding into id sequences.

use std::cmp::Reverse;
use std::collections::HashMap;

use crate::error::{Error, Result};

/// Word-level tokenization: lowercase, split on any non-alphanumeric
/// character, drop empties. Pure-digit tokens are kept.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

/// Frozen token → id mapping. Id 0 is PAD, id 1 is UNK; real tokens are
/// dense from 2 upward in (frequency desc, token asc) order.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

impl Vocabulary {
    fn from_ranked(ranked: Vec<String>) -> Self {
        let mut tokens = Vec::with_capacity(ranked.len() + 2);
        tokens.push(PAD_TOKEN.to_string());
        tokens.push(UNK_TOKEN.to_string());
        tokens.extend(ranked);
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary { tokens, index }
    }

    /// Rebuild from the `vocab.txt` line order (line number = id).
    pub fn from_lines(lines: Vec<String>) -> Result<Self> {
        if lines.len() < 2 || lines[0] != PAD_TOKEN || lines[1] != UNK_TOKEN {
            return Err(Error::Data(
                "vocabulary file must start with the <pad> and <unk> lines".into(),
            ));
        }
        Ok(Vocabulary::from_ranked(lines[2..].to_vec()))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // PAD and UNK are always present
    }

    pub fn id_of(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    /// Id for a token, falling back to UNK.
    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.id_of(token).unwrap_or(UNK_ID)
    }

    pub fn token_of(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// All tokens in id order (PAD and UNK first).
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Real tokens only (no PAD/UNK), in id order.
    pub fn real_tokens(&self) -> &[String] {
        &self.tokens[2..]
    }
}

/// Count token frequencies over a corpus and freeze a vocabulary.
///
/// Tokens with frequency >= `min_freq` are ranked by (frequency desc,
/// token asc) and truncated to `max_size - 2` before PAD and UNK are
/// prepended, so ids are deterministic across runs.
pub fn build_vocab(corpus: &[Vec<String>], min_freq: u64, max_size: usize) -> Result<Vocabulary> {
    if min_freq < 1 {
        return Err(Error::Config("build_vocab: min_freq must be >= 1".into()));
    }
    if max_size < 3 {
        return Err(Error::Config("build_vocab: max_size must be >= 3".into()));
    }
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for doc in corpus {
        for token in doc {
            *counts.entry(token).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(&str, u64)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_freq)
        .collect();
    ranked.sort_by_key(|&(t, c)| (Reverse(c), t.to_string()));
    ranked.truncate(max_size - 2);
    Ok(Vocabulary::from_ranked(
        ranked.into_iter().map(|(t, _)| t.to_string()).collect(),
    ))
}

/// Encode a token sequence: OOV→UNK, truncate to `max_len`, right-pad with
/// PAD; the mask marks real tokens. Empty input is an error.
pub fn encode(tokens: &[String], vocab: &Vocabulary, max_len: usize) -> Result<(Vec<u32>, Vec<u8>)> {
    if max_len == 0 {
        return Err(Error::Config("encode: max_len must be >= 1".into()));
    }
    if tokens.is_empty() {
        return Err(Error::Data("encode: empty token sequence".into()));
    }
    let kept = tokens.len().min(max_len);
    let mut ids = Vec::with_capacity(max_len);
    let mut mask = Vec::with_capacity(max_len);
    for token in &tokens[..kept] {
        ids.push(vocab.id_or_unk(token));
        mask.push(1);
    }
    ids.resize(max_len, PAD_ID);
    mask.resize(max_len, 0);
    Ok((ids, mask))
}

/// Binary label vector over an ordered label space. Codes outside the
/// space are not an error; the count of such codes is returned alongside.
pub fn vectorize_labels(codes: &[String], label_space: &[String]) -> (Vec<u8>, usize) {
    let vec: Vec<u8> = label_space
        .iter()
        .map(|l| u8::from(codes.iter().any(|c| c == l)))
        .collect();
    let unknown = codes
        .iter()
        .filter(|c| !label_space.iter().any(|l| l == *c))
        .count();
    (vec, unknown)
}
