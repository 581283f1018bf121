//! Transparency explanations: why this nudge, and what was set aside.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{ReasonerKind, UserProfile};
use crate::gateway::template::EXPLAIN;
use crate::gateway::Gateway;
use crate::intelligence::selection::StrategySelection;

pub const ONLY_OPTION: &str = "only compatible option";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub text: String,
    pub reasoner: ReasonerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<String>,
}

fn rejected_clause(sel: &StrategySelection) -> String {
    if sel.rejection_reasons.is_empty() {
        return format!("nothing, it was the {ONLY_OPTION}");
    }
    sel.rejection_reasons
        .iter()
        .map(|(id, why)| format!("{id} ({why})"))
        .collect::<Vec<_>>()
        .join("; ")
}

pub fn template_explanation(profile: &UserProfile, sel: &StrategySelection) -> String {
    let head = format!(
        "We read this session as {} processing in the {} stage with {} attention. We chose {}: {}.",
        profile.cognitive, profile.stage, profile.attention, sel.strategy_id, sel.selected_because
    );
    if sel.rejection_reasons.is_empty() {
        format!("{head} It was the {ONLY_OPTION}.")
    } else {
        format!("{head} Set aside: {}.", rejected_clause(sel))
    }
}

/// Names every required field the text leaves out.
pub fn missing_fields(text: &str, profile: &UserProfile, sel: &StrategySelection) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut missing: Vec<String> = [
        profile.cognitive.label(),
        profile.stage.label(),
        profile.attention.label(),
        sel.strategy_id.as_str(),
    ]
    .into_iter()
    .filter(|f| !lower.contains(&f.to_lowercase()) && !lower.contains(&f.replace('_', " ").to_lowercase()))
    .map(str::to_string)
    .collect();
    let cites_rejected = if sel.rejection_reasons.is_empty() {
        lower.contains(ONLY_OPTION)
    } else {
        sel.rejection_reasons
            .keys()
            .any(|id| lower.contains(id.as_str()) || lower.contains(&id.replace('_', " ")))
    };
    if !cites_rejected {
        missing.push("rejected candidate".into());
    }
    missing
}

pub fn explain(profile: &UserProfile, sel: &StrategySelection, kind: ReasonerKind, gateway: &Gateway) -> Explanation {
    let fallback = |reason: String| Explanation {
        text: template_explanation(profile, sel),
        reasoner: kind,
        fallback: Some(reason),
    };
    if kind == ReasonerKind::RuleBased {
        return Explanation { text: template_explanation(profile, sel), reasoner: kind, fallback: None };
    }
    let vars: BTreeMap<String, String> = [
        ("cognitive", profile.cognitive.to_string()),
        ("stage", profile.stage.to_string()),
        ("attention", profile.attention.to_string()),
        ("strategy_id", sel.strategy_id.clone()),
        ("selected_because", sel.selected_because.clone()),
        ("rejected", rejected_clause(sel)),
        ("reasoner", kind.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let bundle = match gateway.bundle(EXPLAIN, vars) {
        Ok(b) => b,
        Err(e) => return fallback(e.to_string()),
    };
    let mut request = bundle.clone();
    for round in 0..2 {
        match gateway.complete(&request) {
            Ok(text) => {
                let missing = missing_fields(&text, profile, sel);
                if missing.is_empty() {
                    return Explanation { text, reasoner: kind, fallback: None };
                }
                if round == 1 {
                    return fallback(format!("explanation omitted {}", missing.join(", ")));
                }
                request = bundle.clone().with_reprompt(format!(
                    "Your answer must mention each of: {}.",
                    missing.join(", ")
                ));
            }
            Err(e) => return fallback(e.to_string()),
        }
    }
    unreachable!("loop returns on its second round")
}
