//! Clinical-text preprocessing: cleaning, tokenization, vocabulary building
//! and encoding into model inputs.
//!
//! The pipeline is a fixed stage order — deduplicate, de-identify, segment
//! and rejoin, tokenize, filter, build vocabulary, encode — and every stage
//! is a pure function, so byte-identical input files and settings yield
//! byte-identical encoded output.

mod clean;
mod encode;
pub mod io;
mod pipeline;

pub use clean::{deduplicate, deidentify, normalize_codes, segment_sentences};
pub use encode::{build_vocab, encode, tokenize, vectorize_labels, Vocabulary};
pub use pipeline::{preprocess_corpus, PipelineSettings, PreprocessOutput, PreprocessSummary};

use serde::{Deserialize, Serialize};

/// One raw dataset record: a clinical note plus its diagnosis-code strings.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RawRecord {
    pub id: String,
    pub text: String,
    pub labels: Vec<String>,
}

/// A note encoded for the model: token ids, attention mask, binary labels.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EncodedExample {
    pub id: String,
    /// PAD-filled token ids, length `max_len`.
    pub ids: Vec<u32>,
    /// 1 where `ids` holds a real token, 0 at padding.
    pub mask: Vec<u8>,
    /// Binary label vector over the label space.
    pub labels: Vec<u8>,
}

impl EncodedExample {
    pub fn label_targets(&self) -> Vec<f64> {
        self.labels.iter().map(|&b| b as f64).collect()
    }

    pub fn seq_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m != 0).count()
    }
}
