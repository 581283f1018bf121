//! Ethics compliance interceptor.
//!
//! Rules are data: a plain-text rule file (`rule_id kind key=value ...`)
//! plus one-phrase-per-line lexicons. Every rule is evaluated for every
//! draft; an evaluator that panics or errors counts as a violation of that
//! rule.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::domain::{BehavioralSignals, ComplianceVerdict, NudgeDelivery, Violation};

pub const DEFAULT_RULES: &str = include_str!("../../assets/rules.txt");
const DEFAULT_LEXICONS: [(&str, &str); 2] = [
    ("blacklist.txt", include_str!("../../assets/lexicons/blacklist.txt")),
    ("loss_framing.txt", include_str!("../../assets/lexicons/loss_framing.txt")),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    ExplanationPresent,
    BlacklistLexicon,
    FactGrounding,
    TaxonomyMembership,
    VulnerabilityProtection,
}

impl FromStr for RuleKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "explanation_present" => RuleKind::ExplanationPresent,
            "blacklist_lexicon" => RuleKind::BlacklistLexicon,
            "fact_grounding" => RuleKind::FactGrounding,
            "taxonomy_membership" => RuleKind::TaxonomyMembership,
            "vulnerability_protection" => RuleKind::VulnerabilityProtection,
            other => return Err(format!("unknown rule kind {other:?}")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplianceRule {
    pub rule_id: String,
    pub kind: RuleKind,
    pub parameters: BTreeMap<String, String>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RuleError {
    #[error("rules line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("rule id {0:?} is defined twice")]
    Duplicate(String),
    #[error("rule {rule}: {reason}")]
    BadParameter { rule: String, reason: String },
    #[error("lexicon {0:?} not found")]
    UnknownLexicon(String),
    #[error("cannot read {0}")]
    Io(String),
}

/// Everything a rule may look at besides the draft itself.
pub struct ComplianceContext<'a> {
    pub signals: &'a BehavioralSignals,
    pub taxonomy_ids: &'a BTreeSet<String>,
}

/// A rule evaluator: `Ok(None)` passes, `Ok(Some(reason))` is a violation.
pub trait RuleCheck: Send + Sync {
    fn check(&self, draft: &NudgeDelivery, ctx: &ComplianceContext<'_>) -> Result<Option<String>, String>;
}

struct ExplanationPresent;

impl RuleCheck for ExplanationPresent {
    fn check(&self, draft: &NudgeDelivery, _: &ComplianceContext<'_>) -> Result<Option<String>, String> {
        Ok(draft.explanation.trim().is_empty().then(|| "explanation is empty".to_string()))
    }
}

struct PhraseList {
    phrases: Vec<String>,
}

impl PhraseList {
    fn first_hit(&self, text: &str) -> Option<&str> {
        let lower = text.to_lowercase();
        self.phrases.iter().find(|p| lower.contains(p.as_str())).map(String::as_str)
    }
}

impl RuleCheck for PhraseList {
    fn check(&self, draft: &NudgeDelivery, _: &ComplianceContext<'_>) -> Result<Option<String>, String> {
        Ok(self.first_hit(&draft.message).map(|p| format!("message contains manipulative phrase {p:?}")))
    }
}

struct FactGrounding {
    tolerance: f64,
}

/// Numbers cited in `text` with their displayed precision (fractional
/// digits). Digits glued to letters, underscores or other digits/periods on
/// the left are part of an identifier and are skipped.
pub fn cited_numbers(text: &str) -> Vec<(f64, usize)> {
    static NUMBER: OnceLock<regex::Regex> = OnceLock::new();
    let re = NUMBER.get_or_init(|| regex::Regex::new(r"\d+(?:,\d{3})*(?:\.\d+)?").expect("static regex"));
    re.find_iter(text)
        .filter(|m| {
            let prev = text[..m.start()].chars().next_back();
            !prev.is_some_and(|c| c.is_alphanumeric() || c == '_' || c == '.')
        })
        .filter_map(|m| {
            let clean = m.as_str().replace(',', "");
            let decimals = clean.split_once('.').map_or(0, |(_, f)| f.len());
            clean.parse::<f64>().ok().map(|v| (v, decimals))
        })
        .collect()
}

impl FactGrounding {
    fn grounded(&self, value: f64, decimals: usize, facts: &[f64]) -> bool {
        // Half a unit in the last displayed digit covers honest rounding.
        let rounding = 0.5 * 10f64.powi(-(decimals as i32));
        facts
            .iter()
            .any(|q| (value - q).abs() <= self.tolerance * q.abs() + rounding)
    }
}

impl RuleCheck for FactGrounding {
    fn check(&self, draft: &NudgeDelivery, ctx: &ComplianceContext<'_>) -> Result<Option<String>, String> {
        let facts = ctx.signals.grounded_quantities();
        let ungrounded: Vec<String> = cited_numbers(&draft.message)
            .into_iter()
            .filter(|(v, d)| !self.grounded(*v, *d, &facts))
            .map(|(v, d)| format!("{v:.d$}"))
            .collect();
        Ok((!ungrounded.is_empty()).then(|| {
            format!("numbers not grounded in session data: {}", ungrounded.join(", "))
        }))
    }
}

struct TaxonomyMembership;

impl RuleCheck for TaxonomyMembership {
    fn check(&self, draft: &NudgeDelivery, ctx: &ComplianceContext<'_>) -> Result<Option<String>, String> {
        Ok((!ctx.taxonomy_ids.contains(&draft.strategy_id))
            .then(|| format!("strategy {:?} is not in the active taxonomy", draft.strategy_id)))
    }
}

struct VulnerabilityProtection {
    threshold: f64,
    loss_framing: PhraseList,
}

impl RuleCheck for VulnerabilityProtection {
    fn check(&self, draft: &NudgeDelivery, ctx: &ComplianceContext<'_>) -> Result<Option<String>, String> {
        let Some(frame) = ctx.signals.latest_pre_nudge_frame() else {
            return Ok(None);
        };
        if frame.sadness <= self.threshold && frame.fear <= self.threshold {
            return Ok(None);
        }
        Ok(self
            .loss_framing
            .first_hit(&draft.message)
            .map(|p| format!("loss framing {p:?} shown to a user in a vulnerable emotional state")))
    }
}

/// Loaded rules with their evaluators, in file order.
#[derive(Clone)]
pub struct RuleSet {
    rules: Vec<(ComplianceRule, Arc<dyn RuleCheck>)>,
}

impl std::fmt::Debug for RuleSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.rules.iter().map(|(r, _)| r)).finish()
    }
}

pub fn parse_lexicon(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

pub fn parse_rules(text: &str) -> Result<Vec<ComplianceRule>, RuleError> {
    let mut rules: Vec<ComplianceRule> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |reason: String| RuleError::Parse { line: n + 1, reason };
        let mut parts = line.split_whitespace();
        let rule_id = parts.next().unwrap_or_default().to_string();
        let kind = parts.next().ok_or_else(|| err("missing rule kind".into()))?.parse().map_err(err)?;
        let mut parameters = BTreeMap::new();
        for p in parts {
            let (k, v) = p.split_once('=').ok_or_else(|| err(format!("expected key=value, got {p:?}")))?;
            parameters.insert(k.to_string(), v.to_string());
        }
        if rules.iter().any(|r| r.rule_id == rule_id) {
            return Err(RuleError::Duplicate(rule_id));
        }
        rules.push(ComplianceRule { rule_id, kind, parameters });
    }
    Ok(rules)
}

impl RuleSet {
    /// Builds evaluators; `lexicon` resolves a lexicon file name to its text.
    pub fn build(
        rules: Vec<ComplianceRule>,
        lexicon: impl Fn(&str) -> Result<String, RuleError>,
    ) -> Result<Self, RuleError> {
        let mut out = Vec::with_capacity(rules.len());
        for rule in rules {
            let param = |key: &str| rule.parameters.get(key).map(String::as_str);
            let number = |key: &str, default: f64| -> Result<f64, RuleError> {
                match param(key) {
                    None => Ok(default),
                    Some(v) => v.parse::<f64>().ok().filter(|x| x.is_finite() && *x >= 0.0).ok_or_else(|| {
                        RuleError::BadParameter { rule: rule.rule_id.clone(), reason: format!("{key}={v}") }
                    }),
                }
            };
            let phrases = |default: &str| -> Result<PhraseList, RuleError> {
                Ok(PhraseList { phrases: parse_lexicon(&lexicon(param("lexicon").unwrap_or(default))?) })
            };
            let check: Arc<dyn RuleCheck> = match rule.kind {
                RuleKind::ExplanationPresent => Arc::new(ExplanationPresent),
                RuleKind::BlacklistLexicon => Arc::new(phrases("blacklist.txt")?),
                RuleKind::FactGrounding => Arc::new(FactGrounding { tolerance: number("tolerance", 0.05)? }),
                RuleKind::TaxonomyMembership => Arc::new(TaxonomyMembership),
                RuleKind::VulnerabilityProtection => Arc::new(VulnerabilityProtection {
                    threshold: number("threshold", 0.5)?,
                    loss_framing: phrases("loss_framing.txt")?,
                }),
            };
            out.push((rule, check));
        }
        Ok(Self { rules: out })
    }

    pub fn parse(rules_text: &str, lexicon_dir: Option<&Path>) -> Result<Self, RuleError> {
        Self::build(parse_rules(rules_text)?, |name| match lexicon_dir {
            Some(dir) => std::fs::read_to_string(dir.join(name))
                .map_err(|e| RuleError::Io(format!("{}: {e}", dir.join(name).display()))),
            None => DEFAULT_LEXICONS
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, t)| t.to_string())
                .ok_or_else(|| RuleError::UnknownLexicon(name.to_string())),
        })
    }

    pub fn load(rules_path: &Path, lexicon_dir: Option<&Path>) -> Result<Self, RuleError> {
        let text = std::fs::read_to_string(rules_path)
            .map_err(|e| RuleError::Io(format!("{}: {e}", rules_path.display())))?;
        Self::parse(&text, lexicon_dir)
    }

    /// Adds a rule with a caller-supplied evaluator.
    pub fn push(&mut self, rule: ComplianceRule, check: Arc<dyn RuleCheck>) {
        self.rules.push((rule, check));
    }

    pub fn rules(&self) -> impl Iterator<Item = &ComplianceRule> {
        self.rules.iter().map(|(r, _)| r)
    }
}

impl Default for RuleSet {
    fn default() -> Self {
        Self::parse(DEFAULT_RULES, None).expect("shipped rules are valid")
    }
}

/// Evaluates every rule; never short-circuits and never passes a rule whose
/// evaluator failed.
pub fn validate_nudge(
    draft: &NudgeDelivery,
    ctx: &ComplianceContext<'_>,
    rules: &RuleSet,
    checked_at: DateTime<Utc>,
) -> ComplianceVerdict {
    let mut violations = Vec::new();
    if let Err(e) = draft.check_structure() {
        violations.push(Violation { rule_id: "structure".into(), reason: e.to_string() });
    }
    for (rule, check) in &rules.rules {
        let outcome = catch_unwind(AssertUnwindSafe(|| check.check(draft, ctx)));
        let reason = match outcome {
            Ok(Ok(None)) => continue,
            Ok(Ok(Some(reason))) => reason,
            Ok(Err(e)) => format!("rule evaluation failed: {e}"),
            Err(panic) => {
                let msg = panic
                    .downcast_ref::<&str>()
                    .map(|s| s.to_string())
                    .or_else(|| panic.downcast_ref::<String>().cloned())
                    .unwrap_or_else(|| "panic".into());
                format!("rule evaluation failed: {msg}")
            }
        };
        violations.push(Violation { rule_id: rule.rule_id.clone(), reason });
    }
    ComplianceVerdict::from_violations(violations, checked_at)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::*;

    fn t0() -> DateTime<Utc> {
        "2025-03-03T09:30:00Z".parse().unwrap()
    }

    fn add(id: &str, w: f64, h: f64) -> ApplianceInteraction {
        ApplianceInteraction {
            appliance_id: id.into(),
            wattage_w: w,
            usage_hours: h,
            action: ApplianceAction::Add,
            applied: true,
            previous_hours: None,
        }
    }

    fn fixture() -> BehavioralSignals {
        let mut s = BehavioralSignals {
            appliance_interactions: vec![add("heater", 2000.0, 3.0), add("lamp", 60.0, 5.0)],
            ..Default::default()
        };
        s.total_consumption_kwh = s.recompute_consumption();
        s
    }

    fn draft(message: &str) -> NudgeDelivery {
        NudgeDelivery {
            nudge_id: NudgeId::new("s1-1"),
            strategy_id: "just_in_time".into(),
            message: message.into(),
            explanation: "Because you looked at the heater.".into(),
            ui: UiContext {
                font_size_px: 16,
                primary_color: "#2E75B6".into(),
                secondary_color: "#BDD7EE".into(),
                chart_type: ChartType::Pie,
            },
            profile: UserProfile {
                cognitive: CognitiveMode::Intuitive,
                stage: BehavioralStage::Contemplation,
                attention: AttentionLevel::High,
                classified_at: t0(),
                reasoner: ReasonerKind::RuleBased,
            },
            delivered_at: t0(),
        }
    }

    fn ids() -> BTreeSet<String> {
        ["just_in_time", "reduce_distance"].iter().map(|s| s.to_string()).collect()
    }

    fn verdict(d: &NudgeDelivery, sig: &BehavioralSignals) -> ComplianceVerdict {
        let ids = ids();
        validate_nudge(d, &ComplianceContext { signals: sig, taxonomy_ids: &ids }, &RuleSet::default(), t0())
    }

    #[test]
    fn grounded_draft_passes() {
        // 2000 W x 3 h = 6.0 kWh, plus 60 W x 5 h = 0.3 kWh, total 6.3.
        let v = verdict(&draft("Your session total is 6.3 kWh; the heater alone uses 6.0 kWh."), &fixture());
        assert!(v.passed, "{:?}", v.violations);
        assert!(v.violations.is_empty());
    }

    #[test]
    fn blacklisted_phrase_fails() {
        let v = verdict(&draft("Last chance to save on the heater!"), &fixture());
        assert_eq!(v.violated_rules(), vec!["blacklist_lexicon"]);
    }

    #[test]
    fn fabricated_number_fails_grounding() {
        // 12.0 against 6.3: |12.0 - 6.3| / 6.3 is about 90%.
        let v = verdict(&draft("You used 12.0 kWh today."), &fixture());
        assert_eq!(v.violated_rules(), vec!["fact_grounding"]);
        // 6.5 is within 5% of 6.3 once the 0.05 display rounding is allowed.
        assert!(verdict(&draft("About 6.5 kWh."), &fixture()).passed);
        assert!(!verdict(&draft("About 6.7 kWh."), &fixture()).passed);
    }

    #[test]
    fn all_violations_reported() {
        let mut d = draft("You must act: 99.0 kWh wasted.");
        d.explanation = " ".into();
        d.strategy_id = "made_up".into();
        let mut sig = fixture();
        let mut f = EmotionFields::neutral_dominant(0.0, t0(), EmotionPhase::PreNudge);
        f.sadness = 0.6;
        f.neutral = 0.4;
        sig.emotion_frames.push(EmotionDistribution::new(f).unwrap());
        let v = verdict(&d, &sig);
        assert_eq!(
            v.violated_rules(),
            vec![
                "explanation_present",
                "blacklist_lexicon",
                "fact_grounding",
                "taxonomy_membership",
                "vulnerability_protection"
            ]
        );
    }

    #[test]
    fn loss_framing_allowed_without_vulnerability() {
        assert!(verdict(&draft("Leaving the heater on is wasting energy."), &fixture()).passed);
    }

    #[test]
    fn panicking_evaluator_fails_closed() {
        struct Boom;
        impl RuleCheck for Boom {
            fn check(&self, _: &NudgeDelivery, _: &ComplianceContext<'_>) -> Result<Option<String>, String> {
                panic!("evaluator bug")
            }
        }
        let mut rules = RuleSet::default();
        rules.push(
            ComplianceRule { rule_id: "custom".into(), kind: RuleKind::FactGrounding, parameters: BTreeMap::new() },
            Arc::new(Boom),
        );
        let ids = ids();
        let sig = fixture();
        let prev = std::panic::take_hook();
        std::panic::set_hook(Box::new(|_| {}));
        let v = validate_nudge(
            &draft("Fine message."),
            &ComplianceContext { signals: &sig, taxonomy_ids: &ids },
            &rules,
            t0(),
        );
        std::panic::set_hook(prev);
        assert!(!v.passed);
        assert_eq!(v.violated_rules(), vec!["custom"]);
    }

    #[test]
    fn number_extraction_skips_identifiers() {
        let nums: Vec<f64> = cited_numbers("heater_2 uses 6.0 kWh, A4 paper, 2,000 W.").into_iter().map(|x| x.0).collect();
        assert_eq!(nums, vec![6.0, 2000.0]);
    }

    #[test]
    fn rule_file_errors() {
        assert!(matches!(parse_rules("a nonsense"), Err(RuleError::Parse { line: 1, .. })));
        assert!(matches!(
            parse_rules("a explanation_present\na explanation_present"),
            Err(RuleError::Duplicate(_))
        ));
        assert!(matches!(
            RuleSet::parse("b blacklist_lexicon lexicon=missing.txt", None),
            Err(RuleError::UnknownLexicon(_))
        ));
    }
}
