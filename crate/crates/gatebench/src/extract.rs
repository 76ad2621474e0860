//! Answer extraction from raw model output.
//!
//! XML variants: strip well-formed `<reasoning>` spans, then take the first
//! `<answer>` element. An opening tag without a closing tag yields the text
//! to the end with `format_ok = false`. The plain variant has no format
//! contract; its fallback takes the last non-empty line and always reports
//! `format_ok = false`, so format-compliance statistics stay comparable
//! across variants.

use crate::error::{Error, Result};
use crate::matcher::ABSTENTION_TOKEN;
use crate::prompt::VariantId;

/// What extraction recovered from one raw completion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractionResult {
    /// The candidate answer, if any text was recoverable.
    pub extracted_answer: Option<String>,
    /// True iff the extracted answer is exactly the abstention token.
    pub abstained: bool,
    /// True iff the output honored the variant's format contract.
    pub format_ok: bool,
    /// True when the plain-text fallback produced the answer.
    pub used_fallback: bool,
}

impl ExtractionResult {
    fn none() -> Self {
        ExtractionResult {
            extracted_answer: None,
            abstained: false,
            format_ok: false,
            used_fallback: false,
        }
    }

    fn from_text(text: String, format_ok: bool, used_fallback: bool) -> Self {
        let abstained = text.trim() == ABSTENTION_TOKEN;
        ExtractionResult {
            extracted_answer: Some(text),
            abstained,
            format_ok,
            used_fallback,
        }
    }
}

/// Extract the candidate answer from raw output under a variant's contract.
pub fn extract_answer(raw: &str, variant: VariantId) -> ExtractionResult {
    if variant.is_xml() {
        extract_xml(raw)
    } else {
        extract_plain(raw)
    }
}

fn extract_xml(raw: &str) -> ExtractionResult {
    let stripped = strip_reasoning_spans(raw);
    match find_tag(&stripped, "answer") {
        TagSearch::Closed(inner) => ExtractionResult::from_text(inner.trim().to_string(), true, false),
        TagSearch::Unclosed(tail) => {
            // Generation usually stops at the closing tag; treat the tail as
            // the answer but flag the contract as unmet.
            ExtractionResult::from_text(tail.trim().to_string(), false, false)
        }
        TagSearch::Absent => ExtractionResult::none(),
    }
}

fn extract_plain(raw: &str) -> ExtractionResult {
    let line = raw.lines().rev().map(str::trim).find(|l| !l.is_empty());
    match line {
        Some(line) => {
            // Peel a leading "Answer:" label if the model added one.
            let cleaned = strip_answer_label(line).trim();
            if cleaned.is_empty() {
                ExtractionResult::none()
            } else {
                ExtractionResult::from_text(cleaned.to_string(), false, true)
            }
        }
        None => ExtractionResult::none(),
    }
}

fn strip_answer_label(line: &str) -> &str {
    for label in ["answer:", "the answer is:", "the answer is"] {
        if line.len() >= label.len()
            && line.is_char_boundary(label.len())
            && line[..label.len()].eq_ignore_ascii_case(label)
        {
            return &line[label.len()..];
        }
    }
    line
}

enum TagSearch {
    Closed(String),
    Unclosed(String),
    Absent,
}

/// Find the first `<tag>...</tag>` element in `text`.
fn find_tag(text: &str, tag: &str) -> TagSearch {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    match text.find(&open) {
        None => TagSearch::Absent,
        Some(start) => {
            let body_start = start + open.len();
            match text[body_start..].find(&close) {
                Some(rel_end) => {
                    TagSearch::Closed(text[body_start..body_start + rel_end].to_string())
                }
                None => TagSearch::Unclosed(text[body_start..].to_string()),
            }
        }
    }
}

/// Remove every well-formed `<reasoning>...</reasoning>` span.
fn strip_reasoning_spans(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut rest = raw;
    loop {
        match rest.find("<reasoning>") {
            Some(start) => {
                let after_open = start + "<reasoning>".len();
                match rest[after_open..].find("</reasoning>") {
                    Some(rel_close) => {
                        out.push_str(&rest[..start]);
                        rest = &rest[after_open + rel_close + "</reasoning>".len()..];
                    }
                    None => {
                        // Unterminated reasoning span: keep it; the answer
                        // search below will treat the output as malformed.
                        out.push_str(rest);
                        break;
                    }
                }
            }
            None => {
                out.push_str(rest);
                break;
            }
        }
    }
    out
}

/// Fraction of records whose output honored the format contract.
pub fn format_compliance_rate(format_ok_flags: &[bool]) -> Result<f64> {
    if format_ok_flags.is_empty() {
        return Err(Error::EmptyInput(
            "format compliance rate needs at least one record".into(),
        ));
    }
    let ok = format_ok_flags.iter().filter(|&&f| f).count();
    Ok(ok as f64 / format_ok_flags.len() as f64)
}
