//! Prompt variants and prompt assembly.
//!
//! Five frozen variants. The XML variants share one answer contract (a
//! `<reasoning>`/`<answer>` scaffold, generation stopped at `</answer>`);
//! the plain variant has no format contract at all and is scored through the
//! extraction fallback.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcher::ABSTENTION_TOKEN;

/// Identifier of a prompt variant.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantId {
    #[default]
    V1XmlReasoning,
    V2XmlAnswerOnly,
    V3Plain,
    CotXml,
    InContextEvidence,
}

impl VariantId {
    pub const ALL: [VariantId; 5] = [
        VariantId::V1XmlReasoning,
        VariantId::V2XmlAnswerOnly,
        VariantId::V3Plain,
        VariantId::CotXml,
        VariantId::InContextEvidence,
    ];

    /// Stable string form (matches the serde rename).
    pub fn as_str(&self) -> &'static str {
        match self {
            VariantId::V1XmlReasoning => "v1_xml_reasoning",
            VariantId::V2XmlAnswerOnly => "v2_xml_answer_only",
            VariantId::V3Plain => "v3_plain",
            VariantId::CotXml => "cot_xml",
            VariantId::InContextEvidence => "in_context_evidence",
        }
    }

    /// Parse either the full name or a short CLI alias.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "v1" | "v1_xml_reasoning" => Ok(VariantId::V1XmlReasoning),
            "v2" | "v2_xml_answer_only" => Ok(VariantId::V2XmlAnswerOnly),
            "v3" | "v3_plain" => Ok(VariantId::V3Plain),
            "cot" | "cot_xml" => Ok(VariantId::CotXml),
            "in_context" | "in-context" | "in_context_evidence" => {
                Ok(VariantId::InContextEvidence)
            }
            other => Err(Error::Config(format!("unknown prompt variant `{other}`"))),
        }
    }

    /// Whether responses carry the XML answer contract.
    pub fn is_xml(&self) -> bool {
        !matches!(self, VariantId::V3Plain)
    }
}

impl std::fmt::Display for VariantId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A prompt variant with its decoding limits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptVariant {
    pub id: VariantId,
    pub max_output_tokens: u32,
    pub stop_string: Option<&'static str>,
}

impl PromptVariant {
    pub fn from_id(id: VariantId) -> Self {
        let (max_output_tokens, stop_string) = match id {
            VariantId::CotXml => (1024, Some("</answer>")),
            VariantId::V3Plain => (512, None),
            _ => (512, Some("</answer>")),
        };
        PromptVariant {
            id,
            max_output_tokens,
            stop_string,
        }
    }
}

const CLOSED_BOOK_PREAMBLE: &str = "You are a careful research assistant. No external \
evidence is provided. Answer from your internal knowledge only. If you are genuinely \
uncertain, answer exactly INSUFFICIENT_EVIDENCE.";

const COT_PREAMBLE: &str = "You are a careful research assistant. No external evidence \
is provided. Answer from your internal knowledge only. Think through each question step \
by step: first identify each relevant fact, then reason about their relationships, and \
finally combine them. If you are genuinely uncertain, answer exactly \
INSUFFICIENT_EVIDENCE.";

const IN_CONTEXT_PREAMBLE: &str = "You are a careful research assistant. Answer using \
only the evidence provided above. If the evidence is insufficient to answer, answer \
exactly INSUFFICIENT_EVIDENCE.";

const XML_REASONING_SCAFFOLD: &str = "Respond using exactly this XML format and nothing \
else after the closing answer tag:\n\n<reasoning>Use 1-4 concise sentences based only on \
your internal knowledge.</reasoning>\n\n<answer>final answer here</answer>\n\nDo not use \
<think> tags.";

const XML_REASONING_SCAFFOLD_EVIDENCE: &str = "Respond using exactly this XML format and \
nothing else after the closing answer tag:\n\n<reasoning>Use 1-4 concise sentences based \
only on the evidence above.</reasoning>\n\n<answer>final answer here</answer>\n\nDo not \
use <think> tags.";

const XML_ANSWER_ONLY_SCAFFOLD: &str = "Respond using exactly this XML format and \
nothing else:\n\n<answer>final answer here</answer>\n\nDo not use <think> tags.";

const XML_CLOSING: &str = "If you are genuinely uncertain, the final answer must be \
<answer>INSUFFICIENT_EVIDENCE</answer>.";

/// Assemble the full prompt for one question under a variant.
///
/// `evidence` lines are numbered `[Evidence N]`; lines already carrying the
/// prefix are kept as-is. The in-context variant requires evidence; the
/// closed-book variants ignore it.
pub fn build_prompt(
    question: &str,
    variant: &PromptVariant,
    evidence: Option<&[String]>,
) -> Result<String> {
    let q = question.trim();
    if q.is_empty() {
        return Err(Error::Config("cannot build a prompt for an empty question".into()));
    }
    match variant.id {
        VariantId::V1XmlReasoning => Ok(format!(
            "{CLOSED_BOOK_PREAMBLE}\n\n{XML_REASONING_SCAFFOLD}\n\n<question>{q}</question>\n\n{XML_CLOSING}"
        )),
        VariantId::V2XmlAnswerOnly => Ok(format!(
            "{CLOSED_BOOK_PREAMBLE}\n\n{XML_ANSWER_ONLY_SCAFFOLD}\n\n<question>{q}</question>\n\n{XML_CLOSING}"
        )),
        VariantId::CotXml => Ok(format!(
            "{COT_PREAMBLE}\n\n{XML_REASONING_SCAFFOLD}\n\n<question>{q}</question>\n\n{XML_CLOSING}"
        )),
        VariantId::V3Plain => Ok(format!(
            "Question: {q}\nAnswer the question using only your internal knowledge. If \
             you are genuinely uncertain, answer exactly {ABSTENTION_TOKEN}."
        )),
        VariantId::InContextEvidence => {
            let lines = evidence.ok_or_else(|| {
                Error::Config("in_context_evidence variant requires evidence blocks".into())
            })?;
            if lines.is_empty() {
                return Err(Error::Config(
                    "in_context_evidence variant requires at least one evidence block".into(),
                ));
            }
            let rendered: Vec<String> = lines
                .iter()
                .enumerate()
                .map(|(i, line)| {
                    if line.starts_with("[Evidence ") {
                        line.clone()
                    } else {
                        format!("[Evidence {}] {line}", i + 1)
                    }
                })
                .collect();
            Ok(format!(
                "{}\n\n{IN_CONTEXT_PREAMBLE}\n\n{XML_REASONING_SCAFFOLD_EVIDENCE}\n\n<question>{q}</question>\n\n{XML_CLOSING}",
                rendered.join("\n")
            ))
        }
    }
}
