//! The end-to-end preprocessing pipeline.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{
    build_vocab, deduplicate, deidentify, encode, normalize_codes, segment_sentences, tokenize,
    vectorize_labels, EncodedExample, RawRecord, Vocabulary,
};
use crate::error::{Error, Result};
use crate::exec;

/// Knobs for [`preprocess_corpus`].
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PipelineSettings {
    /// Records with fewer tokens than this are dropped.
    pub min_tokens: usize,
    /// Encoded sequence length; longer notes are truncated.
    pub max_len: usize,
    /// Minimum corpus frequency for a token to enter the vocabulary.
    pub min_freq: u64,
    /// Vocabulary size cap, PAD and UNK included.
    pub max_vocab: usize,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        PipelineSettings {
            min_tokens: 5,
            max_len: 256,
            min_freq: 1,
            max_vocab: 8192,
        }
    }
}

/// Where the input records went, by count.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct PreprocessSummary {
    pub input_records: usize,
    pub retained: usize,
    pub dropped_duplicate: usize,
    pub dropped_too_short: usize,
    pub dropped_no_labels: usize,
}

impl fmt::Display for PreprocessSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} records in, {} retained ({} duplicate, {} too_short, {} no_labels dropped)",
            self.input_records,
            self.retained,
            self.dropped_duplicate,
            self.dropped_too_short,
            self.dropped_no_labels
        )
    }
}

/// Result of [`preprocess_corpus`].
pub struct PreprocessOutput {
    pub examples: Vec<EncodedExample>,
    pub vocab: Vocabulary,
    /// Sorted normalized codes occurring in the retained records.
    pub label_space: Vec<String>,
    pub summary: PreprocessSummary,
    /// Cleaned token sequences of the retained records, aligned with
    /// `examples`; downstream evaluation reuses them for re-encoding.
    pub tokens: Vec<Vec<String>>,
}

/// Full pipeline: deduplicate → de-identify → segment and rejoin →
/// tokenize → filter (length, labels) → build vocabulary → encode.
///
/// The label space is the sorted set of normalized codes in the retained
/// records. Zero retained records is an error.
pub fn preprocess_corpus(
    records: Vec<RawRecord>,
    settings: &PipelineSettings,
) -> Result<PreprocessOutput> {
    let mut summary = PreprocessSummary {
        input_records: records.len(),
        ..Default::default()
    };
    let deduped = deduplicate(records);
    summary.dropped_duplicate = summary.input_records - deduped.len();

    // Per-record cleaning is pure; fan out but keep input order.
    let cleaned: Vec<(String, Vec<String>, Vec<String>)> = exec::map_ordered(&deduped, |r| {
        let deidentified = deidentify(&r.text);
        let rejoined = segment_sentences(&deidentified).join(" ");
        let tokens = tokenize(&rejoined);
        let codes = normalize_codes(&r.labels);
        (r.id.clone(), tokens, codes)
    });

    let mut retained: Vec<(String, Vec<String>, Vec<String>)> = Vec::with_capacity(cleaned.len());
    for (id, tokens, codes) in cleaned {
        if tokens.len() < settings.min_tokens {
            summary.dropped_too_short += 1;
        } else if codes.is_empty() {
            summary.dropped_no_labels += 1;
        } else {
            retained.push((id, tokens, codes));
        }
    }
    summary.retained = retained.len();
    if retained.is_empty() {
        return Err(Error::Data(format!(
            "preprocessing retained zero records ({summary})"
        )));
    }

    let label_space: Vec<String> = retained
        .iter()
        .flat_map(|(_, _, codes)| codes.iter().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let token_lists: Vec<Vec<String>> = retained.iter().map(|(_, t, _)| t.clone()).collect();
    let vocab = build_vocab(&token_lists, settings.min_freq, settings.max_vocab)?;

    let examples: Vec<Result<EncodedExample>> = exec::map_ordered(&retained, |(id, tokens, codes)| {
        let (ids, mask) = encode(tokens, &vocab, settings.max_len)?;
        let (labels, _) = vectorize_labels(codes, &label_space);
        Ok(EncodedExample {
            id: id.clone(),
            ids,
            mask,
            labels,
        })
    });
    let examples = examples.into_iter().collect::<Result<Vec<_>>>()?;

    Ok(PreprocessOutput {
        examples,
        vocab,
        label_space,
        summary,
        tokens: token_lists,
    })
}
