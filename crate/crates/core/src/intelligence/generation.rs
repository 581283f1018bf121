//! Nudge generator: turns a selected strategy and the session's consumption
//! facts into one short message.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{ApplianceUsage, BehavioralSignals, ReasonerKind, Strategy, UserProfile};
use crate::gateway::template::{render, NUDGE_MESSAGE};
use crate::gateway::{Gateway, GatewayError};
use crate::guardrails::prompts::{missing_required, GuardrailFragment};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GenerationError {
    #[error("generation refused: guardrail fragment {0:?} missing")]
    MissingGuardrail(String),
    #[error("no appliance to ground the message in")]
    NoAppliance,
    #[error("strategy {0:?} has no message templates")]
    NoTemplates(String),
    #[error("generation failed: {0}")]
    Gateway(GatewayError),
}

/// Inputs for one generation attempt.
pub struct GenerationRequest<'a> {
    pub strategy: &'a Strategy,
    pub signals: &'a BehavioralSignals,
    pub profile: &'a UserProfile,
    pub guardrails: &'a [GuardrailFragment],
    pub kind: ReasonerKind,
    /// Zero-based attempt index within the current strategy.
    pub attempt: u32,
    /// Why the previous draft was rejected, if it was.
    pub regeneration_hint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generated {
    pub message: String,
    pub reasoner: ReasonerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<String>,
}

pub trait NudgeGenerator: Send + Sync {
    fn generate(&self, req: &GenerationRequest<'_>, gateway: &Gateway) -> Result<Generated, GenerationError>;
}

/// Template rendering for the rule-based path, the gateway for the
/// model-backed path with the templates as fallback.
#[derive(Debug, Clone, Copy, Default)]
pub struct StandardGenerator;

fn fmt1(x: f64) -> String {
    format!("{x:.1}")
}

pub fn fact_variables(top: &ApplianceUsage) -> BTreeMap<String, String> {
    [
        ("appliance", top.appliance_id.clone()),
        ("kwh", fmt1(top.kwh)),
        ("hours", fmt1(top.usage_hours)),
        ("watts", format!("{:.0}", top.wattage_w)),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

pub fn render_template(strategy: &Strategy, top: &ApplianceUsage, attempt: u32) -> Result<String, GenerationError> {
    if strategy.message_templates.is_empty() {
        return Err(GenerationError::NoTemplates(strategy.id.clone()));
    }
    let text = &strategy.message_templates[attempt as usize % strategy.message_templates.len()];
    render(text, &fact_variables(top)).map_err(GenerationError::Gateway)
}

fn check_guardrails(fragments: &[GuardrailFragment]) -> Result<(), GenerationError> {
    match missing_required(fragments) {
        Some(id) => Err(GenerationError::MissingGuardrail(id.to_string())),
        None => Ok(()),
    }
}

impl NudgeGenerator for StandardGenerator {
    fn generate(&self, req: &GenerationRequest<'_>, gateway: &Gateway) -> Result<Generated, GenerationError> {
        check_guardrails(req.guardrails)?;
        let top = req.signals.top_appliance().ok_or(GenerationError::NoAppliance)?;
        if req.kind == ReasonerKind::RuleBased {
            let message = render_template(req.strategy, &top, req.attempt)?;
            return Ok(Generated { message, reasoner: ReasonerKind::RuleBased, fallback: None });
        }
        let mut vars = fact_variables(&top);
        vars.insert("strategy_id".into(), req.strategy.id.clone());
        vars.insert("strategy_name".into(), req.strategy.display_name.clone());
        vars.insert("strategy_description".into(), req.strategy.description.clone());
        vars.insert("total_kwh".into(), fmt1(req.signals.total_consumption_kwh));
        let bundle = gateway
            .bundle_with_fragments(NUDGE_MESSAGE, req.guardrails.to_vec(), vars)
            .map_err(|e| match e {
                GatewayError::MissingGuardrail(id) => GenerationError::MissingGuardrail(id),
                other => GenerationError::Gateway(other),
            })?;
        let bundle = match &req.regeneration_hint {
            Some(h) => bundle.with_reprompt(h.clone()),
            None => bundle,
        };
        match gateway.complete(&bundle) {
            Ok(message) => Ok(Generated { message, reasoner: ReasonerKind::LlmBacked, fallback: None }),
            Err(e @ (GatewayError::MissingGuardrail(_) | GatewayError::UnresolvedPlaceholder(_) | GatewayError::UnknownTemplate(_))) => {
                Err(GenerationError::Gateway(e))
            }
            Err(e) => Ok(Generated {
                message: render_template(req.strategy, &top, req.attempt)?,
                reasoner: ReasonerKind::LlmBacked,
                fallback: Some(e.to_string()),
            }),
        }
    }
}
