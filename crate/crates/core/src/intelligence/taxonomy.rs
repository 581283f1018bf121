//! Strategy taxonomy: data, loaded at startup and rejected wholesale on any
//! invariant violation.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::canonical::{InvariantViolation, Validate};
use crate::domain::Strategy;

pub const DEFAULT_TAXONOMY: &str = include_str!("../../assets/taxonomy.json");

/// Strategy ids every taxonomy must define.
pub const REQUIRED_STRATEGIES: [&str; 5] =
    ["just_in_time", "remind_consequences", "raise_visibility", "enable_comparisons", "reduce_distance"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyTaxonomy {
    pub version: String,
    pub strategies: Vec<Strategy>,
}

#[derive(Debug, thiserror::Error)]
pub enum TaxonomyError {
    #[error("taxonomy is not valid JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("taxonomy rejected: {0}")]
    Invalid(#[from] InvariantViolation),
    #[error("cannot read taxonomy {path}: {reason}")]
    Io { path: String, reason: String },
}

impl Validate for StrategyTaxonomy {
    fn validate(&self) -> Result<(), InvariantViolation> {
        if self.strategies.is_empty() {
            return Err(InvariantViolation::new("StrategyTaxonomy.strategies", "taxonomy is empty"));
        }
        let mut seen = BTreeSet::new();
        for s in &self.strategies {
            s.validate()?;
            if !seen.insert(s.id.as_str()) {
                return Err(InvariantViolation::new("StrategyTaxonomy.ids", format!("duplicate id {:?}", s.id)));
            }
            if s.message_templates.iter().any(|t| t.trim().is_empty()) {
                return Err(InvariantViolation::new("Strategy.message_templates", format!("{}: blank template", s.id)));
            }
        }
        if let Some(missing) = REQUIRED_STRATEGIES.iter().find(|id| !seen.contains(*id)) {
            return Err(InvariantViolation::new("StrategyTaxonomy.required", format!("missing strategy {missing:?}")));
        }
        Ok(())
    }
}

impl StrategyTaxonomy {
    pub fn parse(text: &str) -> Result<Self, TaxonomyError> {
        let t: StrategyTaxonomy = serde_json::from_str(text)?;
        t.validate()?;
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self, TaxonomyError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TaxonomyError::Io { path: path.display().to_string(), reason: e.to_string() })?;
        Self::parse(&text)
    }

    pub fn get(&self, id: &str) -> Option<&Strategy> {
        self.strategies.iter().find(|s| s.id == id)
    }

    pub fn ids(&self) -> BTreeSet<String> {
        self.strategies.iter().map(|s| s.id.clone()).collect()
    }
}

impl Default for StrategyTaxonomy {
    fn default() -> Self {
        Self::parse(DEFAULT_TAXONOMY).expect("shipped taxonomy is valid")
    }
}
