//! File-based prompt template catalog.
//!
//! One TOML file per template id. Each file declares its placeholders and
//! its output domain, so prompts can change without a rebuild and the mock
//! backend knows what a valid answer looks like.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::GatewayError;

pub const COGNITIVE_MODE: &str = "cognitive_mode";
pub const BEHAVIORAL_STAGE: &str = "behavioral_stage";
pub const ATTENTION: &str = "attention";
pub const STRATEGY_SELECT: &str = "strategy_select";
pub const NUDGE_MESSAGE: &str = "nudge_message";
pub const EXPLAIN: &str = "explain";

const SHIPPED: [(&str, &str); 6] = [
    (COGNITIVE_MODE, include_str!("../../assets/templates/cognitive_mode.toml")),
    (BEHAVIORAL_STAGE, include_str!("../../assets/templates/behavioral_stage.toml")),
    (ATTENTION, include_str!("../../assets/templates/attention.toml")),
    (STRATEGY_SELECT, include_str!("../../assets/templates/strategy_select.toml")),
    (NUDGE_MESSAGE, include_str!("../../assets/templates/nudge_message.toml")),
    (EXPLAIN, include_str!("../../assets/templates/explain.toml")),
];

/// What a completion for a template may contain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OutputDomain {
    /// One of a fixed set of labels.
    Labels(Vec<String>),
    /// One of the comma-separated labels passed in the named variable.
    FromVariable(String),
    FreeText,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateSpec {
    pub id: String,
    pub placeholders: Vec<String>,
    #[serde(default)]
    pub domain: Option<Vec<String>>,
    #[serde(default)]
    pub domain_from: Option<String>,
    /// Fixed sampling temperature; generation templates leave it unset and
    /// take the configured generation default.
    #[serde(default)]
    pub temperature: Option<f64>,
    pub body: String,
    /// Canned answer for free-text templates in mock mode.
    #[serde(default)]
    pub mock_response: Option<String>,
}

impl TemplateSpec {
    pub fn output_domain(&self) -> OutputDomain {
        match (&self.domain, &self.domain_from) {
            (Some(labels), _) => OutputDomain::Labels(labels.clone()),
            (None, Some(var)) => OutputDomain::FromVariable(var.clone()),
            (None, None) => OutputDomain::FreeText,
        }
    }

    /// Domain labels resolved against a set of variables.
    pub fn labels(&self, variables: &BTreeMap<String, String>) -> Option<Vec<String>> {
        match self.output_domain() {
            OutputDomain::Labels(l) => Some(l),
            OutputDomain::FromVariable(v) => Some(split_list(variables.get(&v).map_or("", String::as_str))),
            OutputDomain::FreeText => None,
        }
    }

    fn check(&self) -> Result<(), GatewayError> {
        let declared: BTreeSet<&str> = self.placeholders.iter().map(String::as_str).collect();
        let invalid = |msg: String| GatewayError::InvalidTemplate { id: self.id.clone(), reason: msg };
        for name in placeholders_in(&self.body) {
            if !declared.contains(name.as_str()) {
                return Err(invalid(format!("body uses undeclared placeholder {{{name}}}")));
            }
        }
        if let Some(mock) = &self.mock_response {
            for name in placeholders_in(mock) {
                if !declared.contains(name.as_str()) {
                    return Err(invalid(format!("mock_response uses undeclared placeholder {{{name}}}")));
                }
            }
        }
        if self.domain.is_some() && self.domain_from.is_some() {
            return Err(invalid("declare either domain or domain_from, not both".into()));
        }
        if self.domain.as_ref().is_some_and(Vec::is_empty) {
            return Err(invalid("empty output domain".into()));
        }
        if let Some(v) = &self.domain_from {
            if !declared.contains(v.as_str()) {
                return Err(invalid(format!("domain_from names undeclared placeholder {v}")));
            }
        }
        if let Some(t) = self.temperature {
            if !(0.0..=2.0).contains(&t) {
                return Err(invalid(format!("temperature {t} outside [0, 2]")));
            }
        }
        Ok(())
    }
}

pub fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty()).map(String::from).collect()
}

fn is_ident(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

/// Placeholder names (`{name}`) in order of appearance.
pub fn placeholders_in(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if is_ident(&after[..close]) => {
                out.push(after[..close].to_string());
                rest = &after[close + 1..];
            }
            _ => rest = after,
        }
    }
    out
}

/// Substitutes every `{name}`; a placeholder without a value is an error.
pub fn render(text: &str, variables: &BTreeMap<String, String>) -> Result<String, GatewayError> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if is_ident(&after[..close]) => {
                let name = &after[..close];
                let value = variables
                    .get(name)
                    .ok_or_else(|| GatewayError::UnresolvedPlaceholder(name.to_string()))?;
                out.push_str(value);
                rest = &after[close + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateCatalog {
    templates: BTreeMap<String, TemplateSpec>,
}

impl TemplateCatalog {
    pub fn from_specs(specs: impl IntoIterator<Item = TemplateSpec>) -> Result<Self, GatewayError> {
        let mut templates = BTreeMap::new();
        for spec in specs {
            spec.check()?;
            if templates.insert(spec.id.clone(), spec.clone()).is_some() {
                return Err(GatewayError::InvalidTemplate { id: spec.id, reason: "duplicate id".into() });
            }
        }
        Ok(Self { templates })
    }

    pub fn parse_spec(text: &str) -> Result<TemplateSpec, GatewayError> {
        toml::from_str(text).map_err(|e| GatewayError::InvalidTemplate { id: "?".into(), reason: e.to_string() })
    }

    /// Loads every `*.toml` in `dir`; the file stem must equal the id.
    pub fn load_dir(dir: &Path) -> Result<Self, GatewayError> {
        let io = |e: std::io::Error| GatewayError::InvalidTemplate { id: dir.display().to_string(), reason: e.to_string() };
        let mut specs = Vec::new();
        let mut entries: Vec<_> = std::fs::read_dir(dir).map_err(io)?.collect::<Result<_, _>>().map_err(io)?;
        entries.sort_by_key(|e| e.path());
        for entry in entries {
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) != Some("toml") {
                continue;
            }
            let spec = Self::parse_spec(&std::fs::read_to_string(&path).map_err(io)?)?;
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            if stem != spec.id {
                return Err(GatewayError::InvalidTemplate {
                    id: spec.id,
                    reason: format!("file name {stem}.toml does not match the template id"),
                });
            }
            specs.push(spec);
        }
        Self::from_specs(specs)
    }

    pub fn get(&self, id: &str) -> Option<&TemplateSpec> {
        self.templates.get(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }
}

impl Default for TemplateCatalog {
    fn default() -> Self {
        let specs = SHIPPED
            .iter()
            .map(|(_, text)| Self::parse_spec(text).expect("shipped template parses"));
        Self::from_specs(specs).expect("shipped templates are valid")
    }
}
