//! Record cleaning: deduplication, de-identification, code normalization,
//! sentence segmentation.

use std::collections::HashSet;
use std::sync::OnceLock;

use regex::Regex;

use super::RawRecord;

/// Drop records whose normalized text (lowercased, whitespace-collapsed)
/// was already seen. First occurrence wins; order is preserved.
pub fn deduplicate(records: Vec<RawRecord>) -> Vec<RawRecord> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let key = r
            .text
            .to_lowercase()
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ");
        if seen.insert(key) {
            out.push(r);
        }
    }
    out
}

fn date_numeric() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b\d{1,2}/\d{1,2}/\d{2,4}\b").unwrap())
}

fn date_written() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"\b(?:January|February|March|April|May|June|July|August|September|October|November|December) \d{1,2}, \d{4}\b",
        )
        .unwrap()
    })
}

fn id_run() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\d{6,}").unwrap())
}

fn honorific_name() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b(Dr|Mr|Mrs|Ms)\.\s+[A-Z][A-Za-z]*").unwrap())
}

/// Rule-based de-identification, applied in a fixed order:
/// dates (`d/d/yyyy` and `Month DD, YYYY`) become `[DATE]`, digit runs of
/// six or more become `[ID]`, and a capitalized word right after
/// Dr./Mr./Mrs./Ms. becomes `[NAME]`. Idempotent; conservative by design
/// (synthetic and test data only, not clinical-grade).
pub fn deidentify(text: &str) -> String {
    let t = date_numeric().replace_all(text, "[DATE]");
    let t = date_written().replace_all(&t, "[DATE]");
    let t = id_run().replace_all(&t, "[ID]");
    let t = honorific_name().replace_all(&t, "$1. [NAME]");
    t.into_owned()
}

/// Normalize diagnosis codes: uppercase, trim, strip the dot, drop empties,
/// deduplicate preserving first occurrence.
pub fn normalize_codes(codes: &[String]) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for code in codes {
        let norm: String = code
            .trim()
            .chars()
            .filter(|&c| c != '.')
            .collect::<String>()
            .to_uppercase();
        if !norm.is_empty() && seen.insert(norm.clone()) {
            out.push(norm);
        }
    }
    out
}

const ABBREVIATIONS: &[&str] = &["dr", "mr", "mrs", "ms", "vs"];

/// Split into sentences on `.`, `!`, `?`, `;` (when followed by whitespace
/// or end of text) and on newlines. A short abbreviation list keeps
/// "Dr. Smith" together. Segments are trimmed; empties dropped.
pub fn segment_sentences(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut segments = Vec::new();
    let mut current = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if c == '\n' {
            push_segment(&mut segments, &mut current);
            continue;
        }
        if matches!(c, '.' | '!' | '?' | ';') {
            let next_ok = chars
                .get(i + 1)
                .map(|n| n.is_whitespace())
                .unwrap_or(true);
            let guarded = c == '.' && ends_with_abbreviation(&current);
            if next_ok && !guarded {
                push_segment(&mut segments, &mut current);
                continue;
            }
        }
        current.push(c);
    }
    push_segment(&mut segments, &mut current);
    segments
}

fn ends_with_abbreviation(current: &str) -> bool {
    let last_word = current
        .rsplit(|c: char| c.is_whitespace())
        .next()
        .unwrap_or("");
    ABBREVIATIONS.iter().any(|a| last_word.eq_ignore_ascii_case(a))
}

fn push_segment(segments: &mut Vec<String>, current: &mut String) {
    let trimmed = current.trim();
    if !trimmed.is_empty() {
        segments.push(trimmed.to_string());
    }
    current.clear();
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, text: &str) -> RawRecord {
        RawRecord {
            id: id.into(),
            text: text.into(),
            labels: vec![],
        }
    }

    #[test]
    fn dedup_keeps_first_of_identical_texts() {
        let out = deduplicate(vec![rec("a", "mild cough"), rec("b", "mild cough")]);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].id, "a");
    }

    #[test]
    fn dedup_collapses_whitespace_variants() {
        let out = deduplicate(vec![rec("a", "mild  cough"), rec("b", "Mild cough ")]);
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn dedup_empty_input() {
        assert!(deduplicate(vec![]).is_empty());
    }

    #[test]
    fn deid_replaces_numeric_dates() {
        assert_eq!(deidentify("seen 01/02/2023 at clinic"), "seen [DATE] at clinic");
    }

    #[test]
    fn deid_replaces_written_dates() {
        assert_eq!(deidentify("admitted March 4, 2021."), "admitted [DATE].");
    }

    #[test]
    fn deid_replaces_long_digit_runs() {
        assert_eq!(deidentify("MRN 1234567"), "MRN [ID]");
        // short clinical numbers survive
        assert_eq!(deidentify("BP 120/80"), "BP 120/80");
    }

    #[test]
    fn deid_replaces_names_after_honorifics() {
        assert_eq!(deidentify("seen by Dr. Smith today"), "seen by Dr. [NAME] today");
        assert_eq!(deidentify("Mrs. Jones stable"), "Mrs. [NAME] stable");
    }

    #[test]
    fn deid_is_idempotent() {
        let original = "Dr. Smith saw MRN 9876543 on 01/02/2023 and March 4, 2021";
        let once = deidentify(original);
        assert_eq!(deidentify(&once), once);
    }

    #[test]
    fn deid_is_fixed_point_on_clean_text() {
        let clean = "patient stable on metformin, follow up in 2 weeks";
        assert_eq!(deidentify(clean), clean);
    }

    #[test]
    fn codes_normalize_case_whitespace_and_dot() {
        assert_eq!(normalize_codes(&[" e11.9 ".into()]), vec!["E119"]);
    }

    #[test]
    fn codes_collide_after_normalization() {
        assert_eq!(
            normalize_codes(&["428.0".into(), "4280".into()]),
            vec!["4280"]
        );
    }

    #[test]
    fn codes_empty_input() {
        assert!(normalize_codes(&[]).is_empty());
        assert!(normalize_codes(&["  ".into(), ".".into()]).is_empty());
    }

    #[test]
    fn sentences_split_on_enders() {
        assert_eq!(segment_sentences("Stable. Discharged."), vec!["Stable", "Discharged"]);
        assert_eq!(
            segment_sentences("Fever? Yes; treated!"),
            vec!["Fever", "Yes", "treated"]
        );
    }

    #[test]
    fn sentences_guard_abbreviations() {
        assert_eq!(segment_sentences("Dr. Smith agreed."), vec!["Dr. Smith agreed"]);
        assert_eq!(
            segment_sentences("stable vs. yesterday. improving"),
            vec!["stable vs. yesterday", "improving"]
        );
    }

    #[test]
    fn sentences_keep_decimals_together() {
        assert_eq!(segment_sentences("temp 37.5 stable"), vec!["temp 37.5 stable"]);
    }

    #[test]
    fn sentences_split_on_newlines_and_drop_empties() {
        assert_eq!(
            segment_sentences("line one\nline two\n\n"),
            vec!["line one", "line two"]
        );
        assert!(segment_sentences("").is_empty());
    }
}
