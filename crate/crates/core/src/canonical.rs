//! Canonical JSON: sorted object keys, no insignificant whitespace, and every
//! floating-point number written with exactly six fractional digits.
//!
//! This is the wire format of the HTTP API and the encoding of trace
//! payloads, so equal values always produce identical bytes.

use std::fmt::Write as _;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

/// A named type invariant that a value failed.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invariant {invariant} violated: {detail}")]
pub struct InvariantViolation {
    pub invariant: String,
    pub detail: String,
}

impl InvariantViolation {
    pub fn new(invariant: impl Into<String>, detail: impl Into<String>) -> Self {
        Self { invariant: invariant.into(), detail: detail.into() }
    }
}

/// Type-level invariants checked before a value may be serialized.
pub trait Validate {
    fn validate(&self) -> Result<(), InvariantViolation>;
}

impl<T: Validate> Validate for Vec<T> {
    fn validate(&self) -> Result<(), InvariantViolation> {
        self.iter().try_for_each(Validate::validate)
    }
}

impl<T: Validate> Validate for Option<T> {
    fn validate(&self) -> Result<(), InvariantViolation> {
        self.as_ref().map_or(Ok(()), Validate::validate)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CanonicalError {
    #[error("serialization refused: {0}")]
    Invariant(#[from] InvariantViolation),
    #[error("value is not representable: {0}")]
    Encode(String),
    #[error("malformed canonical input: {0}")]
    Decode(#[from] serde_json::Error),
}

/// Validates `value` and returns its canonical bytes.
pub fn canonical_serialize<T: Serialize + Validate>(value: &T) -> Result<Vec<u8>, CanonicalError> {
    value.validate()?;
    to_canonical_string(value).map(String::into_bytes)
}

/// Canonical encoding without invariant checks, for ad-hoc payload structs
/// that are assembled from already-validated parts. Non-finite floats are
/// mapped to `null` by serde before they reach the writer, so callers must
/// rely on `Validate` to keep them out.
pub fn to_canonical_string<T: Serialize + ?Sized>(value: &T) -> Result<String, CanonicalError> {
    let v = serde_json::to_value(value).map_err(|e| CanonicalError::Encode(e.to_string()))?;
    let mut out = String::new();
    write_value(&v, &mut out)?;
    Ok(out)
}

pub fn canonical_deserialize<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, CanonicalError> {
    Ok(serde_json::from_slice(bytes)?)
}

/// Six-decimal rendering shared with trace payloads and delta reports.
pub fn format_fixed6(v: f64) -> String {
    let s = format!("{v:.6}");
    if s == "-0.000000" {
        "0.000000".to_string()
    } else {
        s
    }
}

fn write_value(v: &Value, out: &mut String) -> Result<(), CanonicalError> {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                write!(out, "{i}").unwrap();
            } else if let Some(u) = n.as_u64() {
                write!(out, "{u}").unwrap();
            } else {
                let f = n
                    .as_f64()
                    .ok_or_else(|| CanonicalError::Encode(format!("number {n}")))?;
                if !f.is_finite() {
                    return Err(CanonicalError::Encode(format!("non-finite number {f}")));
                }
                out.push_str(&format_fixed6(f));
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("string encodes")),
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(item, out)?;
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(k).expect("key encodes"));
                out.push(':');
                write_value(&map[k], out)?;
            }
            out.push('}');
        }
    }
    Ok(())
}
