//! External adjudicator client.
//!
//! The adjudicator is an optional second opinion consulted only when the
//! deterministic rule tier rejects a candidate — never to overturn an accept.
//! Its verdict upgrades the record's rule to `paraphrase`; any transport
//! failure falls back to the rule verdict with a warning on the record.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::backend::RetryPolicy;
use crate::error::{Error, Result, TransportError};

/// Environment variable naming the adjudicator endpoint.
pub const ADJUDICATOR_URL_ENV: &str = "GATEBENCH_ADJUDICATOR_URL";
/// Environment variable holding the adjudicator bearer token.
pub const ADJUDICATOR_KEY_ENV: &str = "GATEBENCH_ADJUDICATOR_KEY";

/// The matching policy sent with every adjudication request.
pub const ADJUDICATION_GUIDELINES: &str = "Judge whether the candidate answer is \
semantically equivalent to the gold answer for this question. Accept era-notation \
variants (BC/BCE, AD/CE), a one-year difference for year answers, partial names that \
unambiguously identify the gold entity, and faithful paraphrases. Accept \
INSUFFICIENT_EVIDENCE only if the gold answer is genuinely unknowable from the \
question. Reject contradictions, answers naming a different entity, and answers \
missing required parts. Respond with JSON: {\"match\": true} or {\"match\": false}.";

#[derive(Debug, Serialize)]
struct AdjudicationRequest<'a> {
    question: &'a str,
    gold: &'a str,
    candidate: &'a str,
    guidelines: &'a str,
}

#[derive(Debug, Deserialize)]
struct AdjudicationResponse {
    #[serde(rename = "match")]
    matched: bool,
}

/// Blocking client for the adjudication endpoint.
pub struct AdjudicatorClient {
    endpoint: String,
    api_key: Option<String>,
    retry: RetryPolicy,
    client: reqwest::blocking::Client,
}

impl AdjudicatorClient {
    pub fn new(endpoint: &str) -> Result<Self> {
        Self::with_options(
            endpoint,
            RetryPolicy {
                max_retries: 2,
                base_delay: Duration::from_millis(500),
            },
            Duration::from_secs(30),
        )
    }

    pub fn with_options(endpoint: &str, retry: RetryPolicy, timeout: Duration) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Config(format!("adjudicator client: {e}")))?;
        Ok(AdjudicatorClient {
            endpoint: endpoint.trim_end_matches('/').to_string(),
            api_key: std::env::var(ADJUDICATOR_KEY_ENV).ok(),
            retry,
            client,
        })
    }

    /// Build from `GATEBENCH_ADJUDICATOR_URL` if it is set.
    pub fn from_env() -> Result<Option<Self>> {
        match std::env::var(ADJUDICATOR_URL_ENV) {
            Ok(url) if !url.trim().is_empty() => Ok(Some(Self::new(&url)?)),
            _ => Ok(None),
        }
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    /// Ask whether `candidate` matches `gold` for `question`.
    pub fn adjudicate(
        &self,
        question: &str,
        gold: &str,
        candidate: &str,
    ) -> std::result::Result<bool, TransportError> {
        let body = json!(AdjudicationRequest {
            question,
            gold,
            candidate,
            guidelines: ADJUDICATION_GUIDELINES,
        });
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            let mut request = self.client.post(&self.endpoint).json(&body);
            if let Some(key) = &self.api_key {
                request = request.bearer_auth(key);
            }
            let detail = match request.send() {
                Ok(response) => {
                    let status = response.status().as_u16();
                    if (200..300).contains(&status) {
                        let parsed: AdjudicationResponse = response
                            .json()
                            .map_err(|e| TransportError::Payload(e.to_string()))?;
                        return Ok(parsed.matched);
                    }
                    if status == 429 || (500..600).contains(&status) {
                        format!("HTTP {status}")
                    } else {
                        return Err(TransportError::Fatal {
                            status,
                            detail: "adjudicator rejected the request".into(),
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
