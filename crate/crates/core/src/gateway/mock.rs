//! Deterministic offline backend.
//!
//! The answer is a pure function of the template id and the canonical
//! encoding of the variables: first a keyed lookup table, then a hash of
//! the key onto the template's output domain.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::template::{render, TemplateSpec};
use super::GatewayError;
use crate::canonical::to_canonical_string;

pub const DEFAULT_MOCK_TABLE: &str = include_str!("../../assets/mock_table.json");

/// One pinned answer. `when` lists the variables that must match exactly;
/// variables not listed are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockEntry {
    pub template_id: String,
    #[serde(default)]
    pub when: BTreeMap<String, String>,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MockTable {
    entries: Vec<MockEntry>,
}

impl MockTable {
    pub fn new(entries: Vec<MockEntry>) -> Self {
        Self { entries }
    }

    pub fn parse(text: &str) -> Result<Self, GatewayError> {
        let entries = serde_json::from_str(text)
            .map_err(|e| GatewayError::InvalidTemplate { id: "mock_table".into(), reason: e.to_string() })?;
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::InvalidTemplate { id: path.display().to_string(), reason: e.to_string() })?;
        Self::parse(&text)
    }

    pub fn entries(&self) -> &[MockEntry] {
        &self.entries
    }

    fn lookup(&self, template_id: &str, variables: &BTreeMap<String, String>) -> Option<&str> {
        self.entries
            .iter()
            .find(|e| e.template_id == template_id && e.when.iter().all(|(k, v)| variables.get(k) == Some(v)))
            .map(|e| e.response.as_str())
    }

    pub fn complete(&self, spec: &TemplateSpec, variables: &BTreeMap<String, String>) -> Result<String, GatewayError> {
        if let Some(hit) = self.lookup(&spec.id, variables) {
            return Ok(hit.to_string());
        }
        if let Some(labels) = spec.labels(variables).filter(|l| !l.is_empty()) {
            let idx = (key_hash(&spec.id, variables) % labels.len() as u64) as usize;
            return Ok(labels[idx].clone());
        }
        match &spec.mock_response {
            Some(text) => render(text, variables),
            None => Ok(String::new()),
        }
    }
}

impl Default for MockTable {
    fn default() -> Self {
        Self::parse(DEFAULT_MOCK_TABLE).expect("shipped mock table parses")
    }
}

fn key_hash(template_id: &str, variables: &BTreeMap<String, String>) -> u64 {
    let vars = to_canonical_string(variables).unwrap_or_default();
    let mut h = Sha256::new();
    h.update(template_id.as_bytes());
    h.update([0u8]);
    h.update(vars.as_bytes());
    let digest = h.finalize();
    let mut first = [0u8; 8];
    first.copy_from_slice(&digest[..8]);
    u64::from_be_bytes(first)
}
