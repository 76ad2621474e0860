//! Crate-wide error type.
//!
//! Library code returns `Error`; the CLI layer converts errors into stage
//! exit codes. Variants are grouped by pipeline stage so a failure names the
//! thing that broke (an atom, a spec cell, a case) rather than a call site.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("pool validation failed for atom `{atom_id}`: {reason}")]
    PoolValidation { atom_id: String, reason: String },

    #[error("generation spec infeasible for cell `{family}` depth {depth}: {reason}")]
    InfeasibleSpec {
        family: String,
        depth: u32,
        reason: String,
    },

    #[error("case `{case_id}` references atom `{atom_id}` missing from the pool")]
    MissingAtom { case_id: String, atom_id: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("record stream inconsistent: {0}")]
    Protocol(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("runs were scored against different benchmark manifests ({a} vs {b})")]
    ManifestMismatch { a: String, b: String },

    #[error("critical depth undefined: {0}")]
    CriticalDepth(String),

    #[error("transport failure: {0}")]
    Transport(#[from] TransportError),
}

impl Error {
    /// Wrap an io error with the path that produced it.
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Wrap a serde_json error with the path that produced it.
    pub fn json(path: impl AsRef<std::path::Path>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

/// Failures surfaced by model backends and the external adjudicator.
///
/// Retryable conditions (429, 5xx, timeouts) are retried inside the backend;
/// what escapes here is terminal for the record that triggered it.
#[derive(Debug, Error)]
pub enum TransportError {
    /// A non-retryable HTTP status (4xx other than 429).
    #[error("fatal HTTP status {status}: {detail}")]
    Fatal { status: u16, detail: String },

    /// Retries were exhausted on a retryable condition.
    #[error("retries exhausted after {attempts} attempts: {detail}")]
    Exhausted { attempts: u32, detail: String },

    /// The endpoint answered but the payload was not the expected shape.
    #[error("malformed response payload: {0}")]
    Payload(String),
}
