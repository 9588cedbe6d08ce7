//! Dataset file formats.
//!
//! Raw corpora are JSONL, one `{"id", "text", "labels"}` object per line.
//! Encoded datasets are versioned JSONL: a meta line
//! `{"format":"icdpred.encoded","version":1,...}` followed by one
//! `{"id","ids","mask","labels"}` object per example. `vocab.txt` and
//! `labels.txt` are one entry per line, line number = id. All writers are
//! deterministic given identical inputs.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EncodedExample, RawRecord, Vocabulary};
use crate::error::{Error, Result};

pub const ENCODED_FORMAT: &str = "icdpred.encoded";
pub const ENCODED_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct EncodedMeta {
    format: String,
    version: u32,
    max_len: usize,
    n_labels: usize,
    vocab_size: usize,
}

/// An encoded corpus plus the header facts needed to interpret it.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDataset {
    pub max_len: usize,
    pub n_labels: usize,
    pub vocab_size: usize,
    pub examples: Vec<EncodedExample>,
}

pub fn read_raw_jsonl(path: &Path) -> Result<Vec<RawRecord>> {
    let file = File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let mut records = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: RawRecord = serde_json::from_str(&line).map_err(|e| {
            Error::Data(format!("{}:{}: bad record: {e}", path.display(), lineno + 1))
        })?;
        if record.id.is_empty() {
            return Err(Error::Data(format!(
                "{}:{}: record id must be nonempty",
                path.display(),
                lineno + 1
            )));
        }
        records.push(record);
    }
    Ok(records)
}

pub fn write_raw_jsonl(path: &Path, records: &[RawRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for record in records {
        serde_json::to_writer(&mut w, record)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_encoded_dataset(path: &Path, dataset: &EncodedDataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let meta = EncodedMeta {
        format: ENCODED_FORMAT.to_string(),
        version: ENCODED_VERSION,
        max_len: dataset.max_len,
        n_labels: dataset.n_labels,
        vocab_size: dataset.vocab_size,
    };
    serde_json::to_writer(&mut w, &meta)?;
    w.write_all(b"\n")?;
    for example in &dataset.examples {
        serde_json::to_writer(&mut w, example)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_encoded_dataset(path: &Path) -> Result<EncodedDataset> {
    let file = File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let mut lines = BufReader::new(file).lines();
    let meta_line = lines
        .next()
        .ok_or_else(|| Error::Data(format!("{}: empty dataset file", path.display())))??;
    let meta: EncodedMeta = serde_json::from_str(&meta_line)
        .map_err(|e| Error::Data(format!("{}: bad meta line: {e}", path.display())))?;
    if meta.format != ENCODED_FORMAT {
        return Err(Error::Data(format!(
            "{}: not an encoded dataset (format {:?})",
            path.display(),
            meta.format
        )));
    }
    if meta.version != ENCODED_VERSION {
        return Err(Error::Data(format!(
            "{}: unsupported dataset version {} (expected {})",
            path.display(),
            meta.version,
            ENCODED_VERSION
        )));
    }
    let mut examples = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: EncodedExample = serde_json::from_str(&line).map_err(|e| {
            Error::Data(format!("{}:{}: bad example: {e}", path.display(), lineno + 2))
        })?;
        if ex.ids.len() != meta.max_len || ex.mask.len() != meta.max_len {
            return Err(Error::Data(format!(
                "{}:{}: sequence length {} does not match max_len {}",
                path.display(),
                lineno + 2,
                ex.ids.len(),
                meta.max_len
            )));
        }
        if ex.labels.len() != meta.n_labels {
            return Err(Error::Data(format!(
                "{}:{}: label vector length {} does not match n_labels {}",
                path.display(),
                lineno + 2,
                ex.labels.len(),
                meta.n_labels
            )));
        }
        examples.push(ex);
    }
    Ok(EncodedDataset {
        max_len: meta.max_len,
        n_labels: meta.n_labels,
        vocab_size: meta.vocab_size,
        examples,
    })
}

/// One token per line, line number = id.
pub fn write_vocab(path: &Path, vocab: &Vocabulary) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for token in vocab.tokens() {
        writeln!(w, "{token}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_vocab(path: &Path) -> Result<Vocabulary> {
    let file = File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let lines: Vec<String> = BufReader::new(file).lines().collect::<std::io::Result<_>>()?;
    Vocabulary::from_lines(lines)
}

/// One label per line, line number = label index.
pub fn write_labels(path: &Path, labels: &[String]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for label in labels {
        writeln!(w, "{label}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let lines: Vec<String> = BufReader::new(file).lines().collect::<std::io::Result<_>>()?;
    if lines.is_empty() {
        return Err(Error::Data(format!("{}: empty label file", path.display())));
    }
    Ok(lines)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::build_vocab;

    #[test]
    fn raw_jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("raw.jsonl");
        let records = vec![
            RawRecord {
                id: "a".into(),
                text: "stable".into(),
                labels: vec!["E11.9".into()],
            },
            RawRecord {
                id: "b".into(),
                text: "worse".into(),
                labels: vec![],
            },
        ];
        write_raw_jsonl(&path, &records).unwrap();
        let back = read_raw_jsonl(&path).unwrap();
        assert_eq!(records, back);
    }

    #[test]
    fn encoded_round_trip_and_version_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enc.jsonl");
        let dataset = EncodedDataset {
            max_len: 4,
            n_labels: 2,
            vocab_size: 7,
            examples: vec![EncodedExample {
                id: "a".into(),
                ids: vec![2, 3, 0, 0],
                mask: vec![1, 1, 0, 0],
                labels: vec![1, 0],
            }],
        };
        write_encoded_dataset(&path, &dataset).unwrap();
        let back = read_encoded_dataset(&path).unwrap();
        assert_eq!(dataset, back);

        // corrupt the version
        let text = std::fs::read_to_string(&path).unwrap();
        let bumped = text.replace("\"version\":1", "\"version\":9");
        std::fs::write(&path, bumped).unwrap();
        let err = read_encoded_dataset(&path).unwrap_err().to_string();
        assert!(err.contains("version"), "{err}");
    }

    #[test]
    fn encoded_writes_identical_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.jsonl");
        let p2 = dir.path().join("b.jsonl");
        let dataset = EncodedDataset {
            max_len: 2,
            n_labels: 1,
            vocab_size: 3,
            examples: vec![EncodedExample {
                id: "x".into(),
                ids: vec![2, 0],
                mask: vec![1, 0],
                labels: vec![1],
            }],
        };
        write_encoded_dataset(&p1, &dataset).unwrap();
        write_encoded_dataset(&p2, &dataset).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn vocab_and_labels_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let vpath = dir.path().join("vocab.txt");
        let lpath = dir.path().join("labels.txt");
        let vocab = build_vocab(&[vec!["b".to_string(), "a".to_string()]], 1, 10).unwrap();
        write_vocab(&vpath, &vocab).unwrap();
        assert_eq!(read_vocab(&vpath).unwrap(), vocab);
        let labels = vec!["E119".to_string(), "I10".to_string()];
        write_labels(&lpath, &labels).unwrap();
        assert_eq!(read_labels(&lpath).unwrap(), labels);
    }
}
