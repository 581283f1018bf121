//! Mandatory system-prompt fragments injected into every model call.
//!
//! File format: a `[fragment_id]` header line followed by the fragment text.
//! Blank lines inside a fragment are preserved; lines starting with `#`
//! before the first header are comments.

use std::path::Path;

use serde::{Deserialize, Serialize};

pub const DEFAULT_GUARDRAILS: &str = include_str!("../../assets/guardrails.txt");

pub const BIAS_MITIGATION: &str = "bias_mitigation";
pub const ETHICS_COMPLIANCE: &str = "ethics_compliance";

/// Fragment ids every prompt must carry.
pub const REQUIRED_FRAGMENTS: [&str; 2] = [BIAS_MITIGATION, ETHICS_COMPLIANCE];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuardrailFragment {
    pub id: String,
    pub text: String,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GuardrailError {
    #[error("guardrail file has no fragments")]
    Empty,
    #[error("guardrail fragment {0:?} is missing")]
    Missing(String),
    #[error("guardrail fragment {0:?} has no text")]
    Blank(String),
    #[error("guardrail fragment {0:?} is defined twice")]
    Duplicate(String),
    #[error("line {0}: text before the first [fragment] header")]
    Orphan(usize),
    #[error("cannot read guardrail file: {0}")]
    Io(String),
}

/// Ordered, validated set of guardrail fragments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GuardrailSet {
    fragments: Vec<GuardrailFragment>,
}

impl GuardrailSet {
    pub fn parse(text: &str) -> Result<Self, GuardrailError> {
        let mut fragments: Vec<GuardrailFragment> = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if let Some(id) = trimmed.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
                let id = id.trim().to_string();
                if fragments.iter().any(|f| f.id == id) {
                    return Err(GuardrailError::Duplicate(id));
                }
                fragments.push(GuardrailFragment { id, text: String::new() });
            } else if let Some(cur) = fragments.last_mut() {
                if !cur.text.is_empty() || !trimmed.is_empty() {
                    cur.text.push_str(line.trim_end());
                    cur.text.push('\n');
                }
            } else if !trimmed.is_empty() && !trimmed.starts_with('#') {
                return Err(GuardrailError::Orphan(n + 1));
            }
        }
        for f in &mut fragments {
            f.text = f.text.trim_end().to_string();
        }
        Self::from_fragments(fragments)
    }

    pub fn load(path: &Path) -> Result<Self, GuardrailError> {
        let text = std::fs::read_to_string(path).map_err(|e| GuardrailError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn from_fragments(fragments: Vec<GuardrailFragment>) -> Result<Self, GuardrailError> {
        if fragments.is_empty() {
            return Err(GuardrailError::Empty);
        }
        if let Some(f) = fragments.iter().find(|f| f.text.trim().is_empty()) {
            return Err(GuardrailError::Blank(f.id.clone()));
        }
        missing_required(&fragments).map_or(Ok(()), |id| Err(GuardrailError::Missing(id.to_string())))?;
        Ok(Self { fragments })
    }

    /// The fragments in file order.
    pub fn guardrail_prompts(&self) -> &[GuardrailFragment] {
        &self.fragments
    }
}

impl Default for GuardrailSet {
    fn default() -> Self {
        Self::parse(DEFAULT_GUARDRAILS).expect("shipped guardrails are valid")
    }
}

/// First required fragment id absent from `fragments`.
pub fn missing_required(fragments: &[GuardrailFragment]) -> Option<&'static str> {
    REQUIRED_FRAGMENTS
        .into_iter()
        .find(|id| !fragments.iter().any(|f| f.id == *id && !f.text.trim().is_empty()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_defaults_have_two_fragments() {
        let g = GuardrailSet::default();
        let ids: Vec<_> = g.guardrail_prompts().iter().map(|f| f.id.as_str()).collect();
        assert_eq!(ids, vec![BIAS_MITIGATION, ETHICS_COMPLIANCE]);
    }

    #[test]
    fn extra_fragment_keeps_order() {
        let text = format!("{DEFAULT_GUARDRAILS}\n[energy_domain]\nTalk about household energy only.\n");
        let g = GuardrailSet::parse(&text).unwrap();
        let ids: Vec<_> = g.guardrail_prompts().iter().map(|f| f.id.as_str()).collect();
        assert_eq!(ids, vec![BIAS_MITIGATION, ETHICS_COMPLIANCE, "energy_domain"]);
        assert_eq!(g.guardrail_prompts()[2].text, "Talk about household energy only.");
    }

    #[test]
    fn empty_file_is_an_error() {
        assert_eq!(GuardrailSet::parse(""), Err(GuardrailError::Empty));
        assert_eq!(GuardrailSet::parse("# only a comment\n"), Err(GuardrailError::Empty));
    }

    #[test]
    fn missing_required_fragment_is_an_error() {
        let text = "[bias_mitigation]\nBe fair.\n";
        assert_eq!(GuardrailSet::parse(text), Err(GuardrailError::Missing(ETHICS_COMPLIANCE.into())));
        let blank = "[bias_mitigation]\nBe fair.\n[ethics_compliance]\n\n";
        assert_eq!(GuardrailSet::parse(blank), Err(GuardrailError::Blank(ETHICS_COMPLIANCE.into())));
    }
}
