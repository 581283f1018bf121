//! User modeling: cognitive mode, stage of change and attention.
//!
//! Each dimension has a rule-based reasoner (pure functions of the inputs
//! and the configured thresholds) and a model-backed reasoner that goes
//! through the gateway. When the model answer cannot be closed into the
//! label domain after one reprompt, or the model is unavailable, the
//! rule-based value is used and the fallback is recorded.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::config::ModelingThresholds;
use crate::domain::*;
use crate::gateway::template::{ATTENTION, BEHAVIORAL_STAGE, COGNITIVE_MODE};
use crate::gateway::{Gateway, GatewayError};

/// One feedback entry joined with the strategy of the nudge it rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackEntry {
    pub record: FeedbackRecord,
    pub strategy_id: String,
}

/// What earlier interactions tell the classifiers and the optimizer.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    /// Oldest first.
    pub feedback: Vec<FeedbackEntry>,
    /// Signals of earlier sessions, oldest first.
    pub prior_sessions: Vec<BehavioralSignals>,
}

impl History {
    /// Length of the run of most recent prior sessions with an applied
    /// reduction.
    pub fn consecutive_reducing_sessions(&self) -> usize {
        self.prior_sessions
            .iter()
            .rev()
            .take_while(|s| s.has_applied_reduction())
            .count()
    }
}

pub fn classify_cognitive_rule(sig: &BehavioralSignals, th: &ModelingThresholds) -> CognitiveMode {
    let heavy = sig
        .appliance_interactions
        .iter()
        .any(|i| i.wattage_w >= th.high_wattage_w);
    if sig.click_count >= th.analytical_min_clicks && sig.mean_hesitation_ms >= th.analytical_min_hesitation_ms && heavy {
        CognitiveMode::Analytical
    } else {
        CognitiveMode::Intuitive
    }
}

pub fn classify_stage_rule(sig: &BehavioralSignals, history: &History, th: &ModelingThresholds) -> BehavioralStage {
    if th.maintenance_sessions > 0 && history.consecutive_reducing_sessions() >= th.maintenance_sessions {
        BehavioralStage::Maintenance
    } else if sig.has_applied_reduction() {
        BehavioralStage::Action
    } else if sig.appliance_interactions.iter().any(ApplianceInteraction::is_planned_reduction) {
        BehavioralStage::Preparation
    } else if high_wattage_views(sig, th) > 0 {
        BehavioralStage::Contemplation
    } else {
        BehavioralStage::PreContemplation
    }
}

pub fn estimate_attention_rule(ctx: &ContextSnapshot, sig: &BehavioralSignals, th: &ModelingThresholds) -> AttentionLevel {
    let mut level = AttentionLevel::High;
    if ctx.device == Device::Mobile {
        level = level.demote();
    }
    if sig.mean_hesitation_ms > th.attention_max_hesitation_ms || sig.click_count < th.attention_min_clicks {
        level = level.demote();
    }
    level
}

fn high_wattage_views(sig: &BehavioralSignals, th: &ModelingThresholds) -> usize {
    sig.appliance_interactions
        .iter()
        .filter(|i| i.action == ApplianceAction::View && i.wattage_w >= th.high_wattage_w)
        .count()
}

fn fmt1(v: f64) -> String {
    format!("{v:.1}")
}

fn describe_interactions(sig: &BehavioralSignals) -> String {
    if sig.appliance_interactions.is_empty() {
        return "none".into();
    }
    sig.appliance_interactions
        .iter()
        .map(|i| {
            let planned = if i.applied { "" } else { ", planned" };
            format!("{} {} W {} h ({}{planned})", i.appliance_id, fmt1(i.wattage_w), fmt1(i.usage_hours), i.action)
        })
        .collect::<Vec<_>>()
        .join("; ")
}

fn vars(pairs: Vec<(&str, String)>) -> BTreeMap<String, String> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

pub fn cognitive_variables(ctx: &ContextSnapshot, sig: &BehavioralSignals) -> BTreeMap<String, String> {
    let max_w = sig.appliance_interactions.iter().map(|i| i.wattage_w).fold(0.0, f64::max);
    vars(vec![
        ("device", ctx.device.to_string()),
        ("time_of_day", ctx.time_of_day.to_string()),
        ("click_count", sig.click_count.to_string()),
        ("mean_hesitation_ms", fmt1(sig.mean_hesitation_ms)),
        ("appliances", describe_interactions(sig)),
        ("max_wattage_w", fmt1(max_w)),
    ])
}

pub fn stage_variables(sig: &BehavioralSignals, history: &History, th: &ModelingThresholds) -> BTreeMap<String, String> {
    let count = |f: fn(&ApplianceInteraction) -> bool| sig.appliance_interactions.iter().filter(|i| f(i)).count();
    vars(vec![
        ("appliances", describe_interactions(sig)),
        ("high_wattage_views", high_wattage_views(sig, th).to_string()),
        ("applied_reductions", count(ApplianceInteraction::is_applied_reduction).to_string()),
        ("planned_reductions", count(ApplianceInteraction::is_planned_reduction).to_string()),
        ("prior_reducing_sessions", history.consecutive_reducing_sessions().to_string()),
    ])
}

pub fn attention_variables(ctx: &ContextSnapshot, sig: &BehavioralSignals) -> BTreeMap<String, String> {
    vars(vec![
        ("device", ctx.device.to_string()),
        ("time_of_day", ctx.time_of_day.to_string()),
        ("click_count", sig.click_count.to_string()),
        ("mean_hesitation_ms", fmt1(sig.mean_hesitation_ms)),
    ])
}

/// Why a model-backed classification fell back to the rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fallback {
    pub reason: String,
    pub rule_value: String,
}

/// One classifier result, as traced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub dimension: String,
    pub value: String,
    pub reasoner: ReasonerKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fallback: Option<Fallback>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{dimension} classifier failed: {source}")]
pub struct ProfilingError {
    pub dimension: &'static str,
    pub source: GatewayError,
}

/// Completed profile plus one trace entry per dimension, in the order
/// cognitive mode, stage, attention.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileResult {
    pub profile: UserProfile,
    pub traces: [Classification; 3],
}

fn is_structural(e: &GatewayError) -> bool {
    matches!(
        e,
        GatewayError::UnknownTemplate(_)
            | GatewayError::InvalidTemplate { .. }
            | GatewayError::NoGuardrails
            | GatewayError::MissingGuardrail(_)
            | GatewayError::InvalidTemperature(_)
            | GatewayError::UnresolvedPlaceholder(_)
    )
}

fn classify_dimension<T>(
    dimension: &'static str,
    kind: ReasonerKind,
    rule_value: T,
    llm: impl FnOnce() -> Result<String, GatewayError>,
) -> Result<(T, Classification), ProfilingError>
where
    T: std::str::FromStr + std::fmt::Display + Copy,
{
    let done = |value: T, fallback| Classification { dimension: dimension.into(), value: value.to_string(), reasoner: kind, fallback };
    if kind == ReasonerKind::RuleBased {
        return Ok((rule_value, done(rule_value, None)));
    }
    let reason = match llm() {
        Ok(label) => match label.parse::<T>() {
            Ok(v) => return Ok((v, done(v, None))),
            Err(_) => format!("label {label:?} outside the domain"),
        },
        Err(e) if is_structural(&e) => return Err(ProfilingError { dimension, source: e }),
        Err(e) => e.to_string(),
    };
    let fb = Fallback { reason, rule_value: rule_value.to_string() };
    Ok((rule_value, done(rule_value, Some(fb))))
}

/// Runs the three classifiers. They share no state, so model-backed calls
/// run concurrently.
pub fn build_profile(
    ctx: &ContextSnapshot,
    sig: &BehavioralSignals,
    history: &History,
    kind: ReasonerKind,
    th: &ModelingThresholds,
    gateway: &Gateway,
    classified_at: DateTime<Utc>,
) -> Result<ProfileResult, ProfilingError> {
    let ask = |template: &str, v: BTreeMap<String, String>| gateway.classify(&gateway.bundle(template, v)?);
    let cognitive = || {
        classify_dimension("cognitive_mode", kind, classify_cognitive_rule(sig, th), || {
            ask(COGNITIVE_MODE, cognitive_variables(ctx, sig))
        })
    };
    let stage = || {
        classify_dimension("behavioral_stage", kind, classify_stage_rule(sig, history, th), || {
            ask(BEHAVIORAL_STAGE, stage_variables(sig, history, th))
        })
    };
    let attention = || {
        classify_dimension("attention", kind, estimate_attention_rule(ctx, sig, th), || {
            ask(ATTENTION, attention_variables(ctx, sig))
        })
    };
    let (c, s, a) = if kind == ReasonerKind::LlmBacked {
        std::thread::scope(|scope| {
            let hs = scope.spawn(stage);
            let ha = scope.spawn(attention);
            let c = cognitive();
            (c, hs.join().expect("stage classifier panicked"), ha.join().expect("attention classifier panicked"))
        })
    } else {
        (cognitive(), stage(), attention())
    };
    let (cognitive, tc) = c?;
    let (stage, ts) = s?;
    let (attention, ta) = a?;
    Ok(ProfileResult {
        profile: UserProfile { cognitive, stage, attention, classified_at, reasoner: kind },
        traces: [tc, ts, ta],
    })
}
