//! Strategy optimizer: constraint filtering, feedback exclusion and a
//! deterministic ranking, with an optional model-backed pick among the
//! candidates that survive the constraints.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::domain::{ReasonerKind, Strategy, Thumbs, UserProfile};
use crate::gateway::template::STRATEGY_SELECT;
use crate::gateway::{Gateway, GatewayError};
use crate::intelligence::taxonomy::StrategyTaxonomy;
use crate::modeling::FeedbackEntry;

/// Marker placed in `selected_because` when constraints had to be relaxed.
pub const RELAXED_MARKER: &str = "relaxed";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySelection {
    pub strategy_id: String,
    pub candidates_considered: Vec<String>,
    pub rejection_reasons: BTreeMap<String, String>,
    pub selected_because: String,
    pub reasoner: ReasonerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<String>,
}

impl StrategySelection {
    pub fn is_relaxed(&self) -> bool {
        self.selected_because.contains(RELAXED_MARKER)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SelectionError {
    #[error("no strategy fits the profile")]
    NoStrategy,
    #[error("strategy selection failed: {0}")]
    Gateway(GatewayError),
}

/// Strategies whose most recent feedback in the stream is thumbs-down.
pub fn disliked(feedback: &[FeedbackEntry]) -> BTreeSet<String> {
    let mut latest: BTreeMap<&str, (chrono::DateTime<chrono::Utc>, usize, Thumbs)> = BTreeMap::new();
    for (i, f) in feedback.iter().enumerate() {
        let key = (f.record.recorded_at, i, f.record.thumbs);
        latest
            .entry(f.strategy_id.as_str())
            .and_modify(|cur| {
                if (key.0, key.1) >= (cur.0, cur.1) {
                    *cur = key;
                }
            })
            .or_insert(key);
    }
    latest
        .into_iter()
        .filter(|(_, (_, _, t))| *t == Thumbs::Down)
        .map(|(id, _)| id.to_string())
        .collect()
}

fn rank_key(s: &Strategy, profile: &UserProfile) -> (u8, String) {
    (s.complexity.distance_to(profile.attention), s.id.clone())
}

fn incompatibility(s: &Strategy, profile: &UserProfile) -> Option<String> {
    if !s.compatible_modes.contains(&profile.cognitive) {
        Some(format!("not suited to {} processing", profile.cognitive))
    } else if !s.compatible_stages.contains(&profile.stage) {
        Some(format!("not suited to the {} stage", profile.stage))
    } else if profile.attention < s.min_attention {
        Some(format!("needs {} attention, user has {}", s.min_attention, profile.attention))
    } else {
        None
    }
}

/// Rule-based selection. `excluded` strategies (failed compliance in this
/// run) are never chosen, even under relaxation.
pub fn select_rule_based(
    profile: &UserProfile,
    feedback: &[FeedbackEntry],
    taxonomy: &StrategyTaxonomy,
    excluded: &BTreeSet<String>,
) -> Result<StrategySelection, SelectionError> {
    rule_pass(profile, feedback, taxonomy, excluded).map(|(s, _)| s)
}

/// Returns the selection and the ranked list of eligible ids.
fn rule_pass(
    profile: &UserProfile,
    feedback: &[FeedbackEntry],
    taxonomy: &StrategyTaxonomy,
    excluded: &BTreeSet<String>,
) -> Result<(StrategySelection, Vec<String>), SelectionError> {
    let down = disliked(feedback);
    let mut reasons: BTreeMap<String, String> = BTreeMap::new();
    let mut compatible: Vec<&Strategy> = Vec::new();
    for s in &taxonomy.strategies {
        if excluded.contains(&s.id) {
            reasons.insert(s.id.clone(), "failed the compliance check in this run".into());
        } else if let Some(r) = incompatibility(s, profile) {
            reasons.insert(s.id.clone(), r);
        } else {
            compatible.push(s);
        }
    }
    let mut eligible: Vec<&Strategy> = compatible.iter().copied().filter(|s| !down.contains(&s.id)).collect();
    let mut relaxed = None;
    if eligible.is_empty() && !compatible.is_empty() {
        eligible = compatible.clone();
        relaxed = Some("feedback exclusion");
    }
    for s in &compatible {
        if down.contains(&s.id) && relaxed.is_none() {
            reasons.insert(s.id.clone(), "the user rated it down most recently".into());
        }
    }
    if eligible.is_empty() {
        // Last resort: ignore the attention floor, lowest complexity wins.
        let mut fallback: Vec<&Strategy> = taxonomy
            .strategies
            .iter()
            .filter(|s| {
                !excluded.contains(&s.id)
                    && s.compatible_modes.contains(&profile.cognitive)
                    && s.compatible_stages.contains(&profile.stage)
            })
            .collect();
        fallback.sort_by_key(|s| (s.complexity, s.id.clone()));
        let chosen = fallback.first().ok_or(SelectionError::NoStrategy)?;
        reasons.remove(&chosen.id);
        let sel = StrategySelection {
            strategy_id: chosen.id.clone(),
            candidates_considered: taxonomy.strategies.iter().map(|s| s.id.clone()).collect(),
            rejection_reasons: reasons,
            selected_because: format!(
                "{RELAXED_MARKER}: attention floor ignored; lowest-complexity ({}) option for {} / {}",
                chosen.complexity, profile.cognitive, profile.stage
            ),
            reasoner: ReasonerKind::RuleBased,
            fallback: None,
        };
        return Ok((sel, vec![chosen.id.clone()]));
    }
    eligible.sort_by_key(|s| rank_key(s, profile));
    let chosen = eligible[0];
    let d0 = chosen.complexity.distance_to(profile.attention);
    for s in &eligible[1..] {
        let d = s.complexity.distance_to(profile.attention);
        let why = if d > d0 {
            format!("{} complexity fits {} attention less well than {}", s.complexity, profile.attention, chosen.id)
        } else {
            format!("ties with {} on complexity fit; {} comes first alphabetically", chosen.id, chosen.id)
        };
        reasons.insert(s.id.clone(), why);
    }
    let mut because = format!(
        "compatible with {} / {} / {} attention; {} complexity is the closest fit",
        profile.cognitive, profile.stage, profile.attention, chosen.complexity
    );
    if let Some(what) = relaxed {
        because = format!("{RELAXED_MARKER} ({what}): {because}");
    }
    let sel = StrategySelection {
        strategy_id: chosen.id.clone(),
        candidates_considered: taxonomy.strategies.iter().map(|s| s.id.clone()).collect(),
        rejection_reasons: reasons,
        selected_because: because,
        reasoner: ReasonerKind::RuleBased,
        fallback: None,
    };
    Ok((sel, eligible.iter().map(|s| s.id.clone()).collect()))
}

pub fn select_strategy(
    profile: &UserProfile,
    feedback: &[FeedbackEntry],
    taxonomy: &StrategyTaxonomy,
    excluded: &BTreeSet<String>,
    kind: ReasonerKind,
    gateway: &Gateway,
) -> Result<StrategySelection, SelectionError> {
    let (rule, candidates) = rule_pass(profile, feedback, taxonomy, excluded)?;
    if kind == ReasonerKind::RuleBased {
        return Ok(rule);
    }
    let mut out = StrategySelection { reasoner: ReasonerKind::LlmBacked, ..rule.clone() };
    if candidates.len() < 2 {
        return Ok(out);
    }
    let notes = candidates
        .iter()
        .filter_map(|id| taxonomy.get(id))
        .map(|s| format!("- {} ({} complexity): {}", s.id, s.complexity, s.description))
        .collect::<Vec<_>>()
        .join("\n");
    let down = disliked(feedback);
    let variables: BTreeMap<String, String> = [
        ("cognitive", profile.cognitive.to_string()),
        ("stage", profile.stage.to_string()),
        ("attention", profile.attention.to_string()),
        ("candidates", candidates.join(", ")),
        ("strategy_notes", notes),
        ("disliked", if down.is_empty() { "none".into() } else { down.into_iter().collect::<Vec<_>>().join(", ") }),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let answer = gateway.bundle(STRATEGY_SELECT, variables).and_then(|b| gateway.classify(&b));
    match answer {
        Ok(id) if candidates.contains(&id) => {
            if id != rule.strategy_id {
                out.rejection_reasons.remove(&id);
                out.rejection_reasons.insert(
                    rule.strategy_id.clone(),
                    format!("the model preferred {id} among the compatible options"),
                );
                out.strategy_id = id;
            }
            out.selected_because = format!("model choice among compatible options; {}", out.selected_because);
        }
        Ok(other) => out.fallback = Some(format!("model answered {other:?}, not a candidate")),
        Err(e @ (GatewayError::MissingGuardrail(_) | GatewayError::NoGuardrails | GatewayError::UnknownTemplate(_))) => {
            return Err(SelectionError::Gateway(e))
        }
        Err(e) => out.fallback = Some(e.to_string()),
    }
    Ok(out)
}
