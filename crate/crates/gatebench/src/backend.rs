//! Model backends: the query surface the gate engine drives.
//!
//! `Probe` is one unit of work (an atom probe, a sub-question, or a main
//! question) with everything a backend or matcher needs. The HTTP backend
//! only reads the prompt and decoding limits; the scripted backend reads the
//! probe's identity and gold to synthesize deterministic behavior.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::TransportError;
use crate::generator::Family;
use crate::matcher::OrderingItem;
use crate::pool::Granularity;
use crate::prompt::{PromptVariant, VariantId};

/// Environment variable holding the bearer token for the model endpoint.
pub const API_KEY_ENV: &str = "GATEBENCH_API_KEY";

/// What kind of record a probe produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    AtomProbe,
    SubQuestion,
    Main,
}

/// One question to send to a model, with the metadata needed to score it.
#[derive(Debug, Clone)]
pub struct Probe {
    pub record_id: String,
    pub case_id: String,
    pub kind: ProbeKind,
    /// The probed atom (atom probes and sub-questions; never main).
    pub atom_id: Option<String>,
    /// Paraphrase index 0-3 (atom probes only).
    pub probe_index: Option<u8>,
    pub family: Family,
    pub depth: u32,
    pub depth_bin: u32,
    pub question: String,
    pub prompt: String,
    pub gold_answer: String,
    pub gold_is_knowable: bool,
    /// Competing option entities (matching context and wrong-answer source).
    pub options: Vec<String>,
    /// Gold ordering for rank main questions.
    pub ordering: Option<Vec<OrderingItem>>,
    /// All atom ids of the parent case (scripted instability coupling).
    pub case_atom_ids: Vec<String>,
    pub required_granularity: Granularity,
}

/// Decoding parameters for one query. Temperature is pinned to zero for the
/// whole protocol.
#[derive(Debug, Clone)]
pub struct QuerySpec {
    pub model_id: String,
    pub variant: VariantId,
    pub temperature: f64,
    pub max_tokens: u32,
    pub stop: Option<String>,
}

impl QuerySpec {
    pub fn for_variant(model_id: &str, variant: &PromptVariant) -> Self {
        QuerySpec {
            model_id: model_id.to_string(),
            variant: variant.id,
            temperature: 0.0,
            max_tokens: variant.max_output_tokens,
            stop: variant.stop_string.map(str::to_string),
        }
    }
}

/// A raw completion plus transport bookkeeping.
#[derive(Debug, Clone)]
pub struct BackendResponse {
    /// The completion text, verbatim.
    pub raw_text: String,
    pub latency_ms: u64,
    pub transport_meta: BTreeMap<String, String>,
}

/// Anything that can answer probes.
pub trait ModelBackend: Sync {
    fn model_id(&self) -> &str;

    /// True when identical inputs always produce identical outputs, which
    /// lets the harness pin record timestamps for byte-identical reruns.
    fn deterministic(&self) -> bool;

    fn query(&self, probe: &Probe, spec: &QuerySpec) -> Result<BackendResponse, TransportError>;
}

/// Retry schedule for retryable transport failures (429, 5xx, timeouts).
/// Delay doubles per attempt starting from `base_delay`.
#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    pub fn delay_for_attempt(&self, attempt: u32) -> Duration {
        self.base_delay.saturating_mul(1u32 << attempt.min(16))
    }
}

/// An OpenAI-style chat-completions endpoint.
pub struct HttpBackend {
    base_url: String,
    model_id: String,
    api_key: Option<String>,
    retry: RetryPolicy,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    /// Build a backend against `{base_url}/v1/chat/completions`, reading the
    /// bearer token from `GATEBENCH_API_KEY` when present.
    pub fn new(base_url: &str, model_id: &str) -> crate::error::Result<Self> {
        Self::with_options(base_url, model_id, RetryPolicy::default(), Duration::from_secs(60))
    }

    pub fn with_options(
        base_url: &str,
        model_id: &str,
        retry: RetryPolicy,
        timeout: Duration,
    ) -> crate::error::Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| crate::error::Error::Config(format!("http client: {e}")))?;
        Ok(HttpBackend {
            base_url: base_url.trim_end_matches('/').to_string(),
            model_id: model_id.to_string(),
            api_key: std::env::var(API_KEY_ENV).ok(),
            retry,
            client,
        })
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    fn request_body(&self, probe: &Probe, spec: &QuerySpec) -> serde_json::Value {
        let mut body = json!({
            "model": spec.model_id,
            "messages": [{"role": "user", "content": probe.prompt}],
            "temperature": spec.temperature,
            "max_tokens": spec.max_tokens,
        });
        if let Some(stop) = &spec.stop {
            body["stop"] = json!([stop]);
        }
        body
    }
}

#[derive(Debug, Deserialize)]
struct ChatCompletion {
    choices: Vec<ChatChoice>,
}

#[derive(Debug, Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Debug, Deserialize)]
struct ChatMessage {
    content: String,
}

impl ModelBackend for HttpBackend {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn deterministic(&self) -> bool {
        false
    }

    fn query(&self, probe: &Probe, spec: &QuerySpec) -> Result<BackendResponse, TransportError> {
        let url = format!("{}/v1/chat/completions", self.base_url);
        let body = self.request_body(probe, spec);
        let start = Instant::now();
        let mut attempts = 0u32;

        loop {
            attempts += 1;
            let mut request = self.client.post(&url).json(&body);
            if let Some(key) = &self.api_key {
                request = request.bearer_auth(key);
            }
            let detail = match request.send() {
                Ok(response) => {
                    let status = response.status().as_u16();
                    if (200..300).contains(&status) {
                        let parsed: ChatCompletion = response
                            .json()
                            .map_err(|e| TransportError::Payload(e.to_string()))?;
                        let raw_text = parsed
                            .choices
                            .into_iter()
                            .next()
                            .map(|c| c.message.content)
                            .ok_or_else(|| {
                                TransportError::Payload("completion has no choices".into())
                            })?;
                        let mut meta = BTreeMap::new();
                        meta.insert("status".into(), status.to_string());
                        meta.insert("attempts".into(), attempts.to_string());
                        return Ok(BackendResponse {
                            raw_text,
                            latency_ms: start.elapsed().as_millis() as u64,
                            transport_meta: meta,
                        });
                    }
                    // 429 and 5xx are retryable; every other status is fatal.
                    if status == 429 || (500..600).contains(&status) {
                        format!("HTTP {status}")
                    } else {
                        let detail = response.text().unwrap_or_default();
                        return Err(TransportError::Fatal {
                            status,
                            detail: detail.chars().take(200).collect(),
                        });
                    }
                }
                Err(e) => e.to_string(),
            };
            if attempts > self.retry.max_retries {
                return Err(TransportError::Exhausted { attempts, detail });
            }
            std::thread::sleep(self.retry.delay_for_attempt(attempts - 1));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::Family;

    pub(crate) fn dummy_probe(record_id: &str) -> Probe {
        Probe {
            record_id: record_id.to_string(),
            case_id: "case-0".into(),
            kind: ProbeKind::Main,
            atom_id: None,
            probe_index: None,
            family: Family::PairFarControl,
            depth: 2,
            depth_bin: 2,
            question: "What came first, A or B?".into(),
            prompt: "prompt".into(),
            gold_answer: "A".into(),
            gold_is_knowable: true,
            options: vec![],
            ordering: None,
            case_atom_ids: vec![],
            required_granularity: Granularity::Year,
        }
    }

    #[test]
    fn query_spec_pins_temperature_and_limits() {
        let variant = PromptVariant::from_id(VariantId::CotXml);
        let spec = QuerySpec::for_variant("m", &variant);
        assert_eq!(spec.temperature, 0.0);
        assert_eq!(spec.max_tokens, 1024);
        assert_eq!(spec.stop.as_deref(), Some("</answer>"));
    }

    #[test]
    fn request_body_shape() {
        let backend = HttpBackend::new("http://example.test/", "model-x").unwrap();
        let variant = PromptVariant::from_id(VariantId::V1XmlReasoning);
        let spec = QuerySpec::for_variant("model-x", &variant);
        let body = backend.request_body(&dummy_probe("r"), &spec);
        assert_eq!(body["model"], "model-x");
        assert_eq!(body["temperature"].as_f64(), Some(0.0));
        assert_eq!(body["max_tokens"].as_u64(), Some(512));
        assert_eq!(body["stop"][0], "</answer>");
        assert_eq!(body["messages"][0]["role"], "user");
        assert_eq!(body["messages"][0]["content"], "prompt");
    }

    #[test]
    fn retry_delays_double() {
        let policy = RetryPolicy {
            max_retries: 3,
            base_delay: Duration::from_millis(100),
        };
        assert_eq!(policy.delay_for_attempt(0), Duration::from_millis(100));
        assert_eq!(policy.delay_for_attempt(1), Duration::from_millis(200));
        assert_eq!(policy.delay_for_attempt(2), Duration::from_millis(400));
    }
}
