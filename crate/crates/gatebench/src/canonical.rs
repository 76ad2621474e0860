//! Canonical JSON serialization and content hashing.
//!
//! Every hash the harness records (pool hash, manifest hash, run ids) is the
//! SHA-256 of a canonical JSON form: object keys sorted lexicographically, no
//! insignificant whitespace. Two files that parse to the same value hash
//! identically regardless of formatting, so provenance checks survive
//! pretty-printing.

use serde_json::Value;
use sha2::{Digest, Sha256};

/// Render a JSON value in canonical form: sorted object keys, no whitespace.
pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_canonical(value, &mut out);
    out
}

fn write_canonical(value: &Value, out: &mut String) {
    match value {
        Value::Object(map) => {
            // serde_json's default map preserves insertion order; sort here so
            // the canonical form is independent of how the value was built.
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, key) in keys.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String((*key).clone()).to_string());
                out.push(':');
                write_canonical(&map[*key], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        // Scalars already have a single serde_json rendering.
        other => out.push_str(&other.to_string()),
    }
}

/// Lowercase hex SHA-256 of arbitrary bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// SHA-256 of the canonical JSON form of a value.
pub fn hash_value(value: &Value) -> String {
    sha256_hex(canonical_json(value).as_bytes())
}

/// SHA-256 of the canonical JSON form of any serializable value.
pub fn hash_serializable<T: serde::Serialize>(value: &T) -> String {
    let json = serde_json::to_value(value).expect("in-memory value serializes");
    hash_value(&json)
}
