//! Shared vocabulary: profiles, signals, strategies, deliveries and audit records.
//!
//! Everything here is an immutable value object. Wire labels for enums are
//! lowercase snake_case and timestamps are UTC (RFC 3339). Construction-time
//! checks live in [`Validate`] implementations; [`crate::canonical`] refuses to
//! serialize a value that fails them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::canonical::{InvariantViolation, Validate};

/// Tolerance applied when recomputing consumption from appliance interactions.
pub const CONSUMPTION_TOLERANCE_KWH: f64 = 1e-6;

/// Accepted range for the sum of an emotion distribution (detector rounding).
pub const EMOTION_SUM_RANGE: (f64, f64) = (0.98, 1.02);

pub const MIN_FONT_PX: u32 = 12;
pub const MAX_FONT_PX: u32 = 24;

macro_rules! labeled_enum {
    (
        $(#[$meta:meta])*
        pub enum $name:ident { $($variant:ident => $label:literal),+ $(,)? }
    ) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $label)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn label(self) -> &'static str {
                match self { $($name::$variant => $label),+ }
            }

            pub fn labels() -> Vec<&'static str> {
                Self::ALL.iter().map(|v| v.label()).collect()
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.label())
            }
        }

        impl std::str::FromStr for $name {
            type Err = UnknownLabel;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                let norm = s.trim().to_ascii_lowercase().replace('-', "_");
                match norm.as_str() {
                    $($label => Ok($name::$variant),)+
                    _ => Err(UnknownLabel { kind: stringify!($name), input: s.to_string() }),
                }
            }
        }
    };
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown {kind} label {input:?}")]
pub struct UnknownLabel {
    pub kind: &'static str,
    pub input: String,
}

labeled_enum! {
    /// Dual-process mode: fast/intuitive versus slow/analytical.
    pub enum CognitiveMode { Intuitive => "intuitive", Analytical => "analytical" }
}

labeled_enum! {
    /// Transtheoretical stage of change. Declaration order is the stage order.
    pub enum BehavioralStage {
        PreContemplation => "pre_contemplation",
        Contemplation => "contemplation",
        Preparation => "preparation",
        Action => "action",
        Maintenance => "maintenance",
    }
}

labeled_enum! {
    pub enum AttentionLevel { Low => "low", Medium => "medium", High => "high" }
}

labeled_enum! {
    /// How much processing a strategy asks of the user.
    pub enum Complexity { Low => "low", Medium => "medium", High => "high" }
}

labeled_enum! {
    pub enum ReasonerKind { LlmBacked => "llm_backed", RuleBased => "rule_based" }
}

labeled_enum! {
    pub enum Device { Desktop => "desktop", Mobile => "mobile" }
}

labeled_enum! {
    pub enum TimeOfDay { Morning => "morning", Afternoon => "afternoon", Evening => "evening" }
}

labeled_enum! {
    pub enum ApplianceAction {
        View => "view",
        TurnOn => "turn_on",
        TurnOff => "turn_off",
        AdjustHours => "adjust_hours",
        Add => "add",
        Remove => "remove",
    }
}

labeled_enum! {
    pub enum EmotionPhase { PreNudge => "pre_nudge", PostNudge => "post_nudge" }
}

labeled_enum! {
    pub enum ChartType { Bar => "bar", Pie => "pie", Line => "line" }
}

labeled_enum! {
    pub enum Thumbs { Up => "up", Down => "down" }
}

labeled_enum! {
    /// Pipeline stages in their canonical per-run order, followed by the
    /// session-level stages (feedback and emotion frames).
    pub enum TraceStage {
        RawSignals => "raw_signals",
        Context => "context",
        CognitiveMode => "cognitive_mode",
        BehavioralStage => "behavioral_stage",
        Attention => "attention",
        StrategySelection => "strategy_selection",
        NudgeDraft => "nudge_draft",
        UiAdaptation => "ui_adaptation",
        ComplianceVerdict => "compliance_verdict",
        Delivery => "delivery",
        Feedback => "feedback",
        EmotionPre => "emotion_pre",
        EmotionPost => "emotion_post",
    }
}

impl AttentionLevel {
    pub fn rank(self) -> u8 {
        self as u8
    }

    pub fn demote(self) -> Self {
        match self {
            AttentionLevel::High => AttentionLevel::Medium,
            _ => AttentionLevel::Low,
        }
    }
}

impl Complexity {
    pub fn rank(self) -> u8 {
        self as u8
    }

    /// Distance between this complexity and an attention level on the shared
    /// low/medium/high scale.
    pub fn distance_to(self, attention: AttentionLevel) -> u8 {
        self.rank().abs_diff(attention.rank())
    }
}

impl ReasonerKind {
    /// Accepts the wire label as well as the short query-string forms.
    pub fn parse_loose(s: &str) -> Result<Self, UnknownLabel> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rule" | "rules" => Ok(ReasonerKind::RuleBased),
            "llm" => Ok(ReasonerKind::LlmBacked),
            other => other.parse(),
        }
    }
}

impl TraceStage {
    /// Position in the canonical order; used for run-ordering checks.
    pub fn order(self) -> u8 {
        self as u8
    }

    pub fn is_run_stage(self) -> bool {
        self.order() <= TraceStage::Delivery.order()
    }
}

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Self {
                Self(s.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_string())
            }
        }
    };
}

string_id!(
    /// Opaque session identifier.
    SessionId
);
string_id!(
    /// Opaque identifier of one delivered (or drafted) nudge.
    NudgeId
);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub cognitive: CognitiveMode,
    pub stage: BehavioralStage,
    pub attention: AttentionLevel,
    pub classified_at: DateTime<Utc>,
    pub reasoner: ReasonerKind,
}

impl UserProfile {
    /// The three dimensions without provenance, handy for comparisons.
    pub fn dimensions(&self) -> (CognitiveMode, BehavioralStage, AttentionLevel) {
        (self.cognitive, self.stage, self.attention)
    }
}

impl Validate for UserProfile {
    fn validate(&self) -> Result<(), InvariantViolation> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextSnapshot {
    pub session_id: SessionId,
    pub device: Device,
    pub time_of_day: TimeOfDay,
    pub captured_at: DateTime<Utc>,
    /// Caller-supplied local offset used for the daypart bucket.
    #[serde(default)]
    pub utc_offset_minutes: i32,
}

impl Validate for ContextSnapshot {
    fn validate(&self) -> Result<(), InvariantViolation> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplianceInteraction {
    pub appliance_id: String,
    pub wattage_w: f64,
    pub usage_hours: f64,
    pub action: ApplianceAction,
    /// False for a planned change the user has not committed yet.
    #[serde(default = "default_true")]
    pub applied: bool,
    /// Usage hours in effect before this interaction, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub previous_hours: Option<f64>,
}

fn default_true() -> bool {
    true
}

impl ApplianceInteraction {
    pub fn lowers_hours(&self) -> bool {
        self.action == ApplianceAction::AdjustHours
            && self.previous_hours.is_some_and(|p| self.usage_hours < p)
    }

    /// An applied action that cuts consumption this session.
    pub fn is_applied_reduction(&self) -> bool {
        self.applied && (self.action == ApplianceAction::TurnOff || self.lowers_hours())
    }

    pub fn is_planned_reduction(&self) -> bool {
        !self.applied && self.lowers_hours()
    }
}

/// Consumption of one appliance in the current set.
#[derive(Debug, Clone, PartialEq)]
pub struct ApplianceUsage {
    pub appliance_id: String,
    pub wattage_w: f64,
    pub usage_hours: f64,
    pub kwh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehavioralSignals {
    pub click_count: u64,
    pub mean_hesitation_ms: f64,
    pub appliance_interactions: Vec<ApplianceInteraction>,
    pub total_consumption_kwh: f64,
    pub emotion_frames: Vec<EmotionDistribution>,
}

impl Default for BehavioralSignals {
    fn default() -> Self {
        Self {
            click_count: 0,
            mean_hesitation_ms: 0.0,
            appliance_interactions: Vec::new(),
            total_consumption_kwh: 0.0,
            emotion_frames: Vec::new(),
        }
    }
}

impl BehavioralSignals {
    /// Appliances present and switched on after replaying the interactions in
    /// order, sorted by appliance id.
    pub fn current_appliances(&self) -> Vec<ApplianceUsage> {
        let mut state: BTreeMap<&str, (f64, f64, bool)> = BTreeMap::new();
        for it in &self.appliance_interactions {
            let id = it.appliance_id.as_str();
            match it.action {
                ApplianceAction::Remove => {
                    state.remove(id);
                }
                ApplianceAction::TurnOff => {
                    let e = state.entry(id).or_insert((it.wattage_w, it.usage_hours, false));
                    e.0 = it.wattage_w;
                    e.2 = false;
                }
                ApplianceAction::AdjustHours if !it.applied => {
                    state.entry(id).or_insert((
                        it.wattage_w,
                        it.previous_hours.unwrap_or(it.usage_hours),
                        true,
                    ));
                }
                _ => {
                    let on = matches!(it.action, ApplianceAction::TurnOn | ApplianceAction::Add)
                        || state.get(id).is_none_or(|e| e.2);
                    state.insert(id, (it.wattage_w, it.usage_hours, on));
                }
            }
        }
        state
            .into_iter()
            .filter(|(_, (_, _, on))| *on)
            .map(|(id, (w, h, _))| ApplianceUsage {
                appliance_id: id.to_string(),
                wattage_w: w,
                usage_hours: h,
                kwh: w * h / 1000.0,
            })
            .collect()
    }

    /// Sum of wattage × hours / 1000 over the current appliance set.
    pub fn recompute_consumption(&self) -> f64 {
        self.current_appliances().iter().map(|a| a.kwh).sum()
    }

    /// Highest-consuming current appliance; falls back to the largest
    /// interaction when everything has been switched off.
    pub fn top_appliance(&self) -> Option<ApplianceUsage> {
        let by_kwh = |a: &ApplianceUsage, b: &ApplianceUsage| {
            a.kwh
                .total_cmp(&b.kwh)
                .then_with(|| b.appliance_id.cmp(&a.appliance_id))
        };
        self.current_appliances().into_iter().max_by(by_kwh).or_else(|| {
            self.appliance_interactions
                .iter()
                .map(|it| ApplianceUsage {
                    appliance_id: it.appliance_id.clone(),
                    wattage_w: it.wattage_w,
                    usage_hours: it.usage_hours,
                    kwh: it.wattage_w * it.usage_hours / 1000.0,
                })
                .max_by(by_kwh)
        })
    }

    /// Every appliance-derived quantity a message may cite.
    pub fn grounded_quantities(&self) -> Vec<f64> {
        let mut q = vec![self.total_consumption_kwh];
        for it in &self.appliance_interactions {
            q.extend([it.wattage_w, it.usage_hours, it.wattage_w * it.usage_hours / 1000.0]);
            if let Some(p) = it.previous_hours {
                q.extend([p, it.wattage_w * p / 1000.0, (p - it.usage_hours).abs()]);
            }
        }
        for a in self.current_appliances() {
            q.push(a.kwh);
        }
        q
    }

    pub fn has_applied_reduction(&self) -> bool {
        self.appliance_interactions.iter().any(|i| i.is_applied_reduction())
    }

    /// Latest frame recorded before any nudge was delivered.
    pub fn latest_pre_nudge_frame(&self) -> Option<&EmotionDistribution> {
        self.emotion_frames
            .iter()
            .rev()
            .find(|f| f.phase == EmotionPhase::PreNudge)
    }
}

impl Validate for BehavioralSignals {
    fn validate(&self) -> Result<(), InvariantViolation> {
        check_nonneg("mean_hesitation_ms", self.mean_hesitation_ms)?;
        check_nonneg("total_consumption_kwh", self.total_consumption_kwh)?;
        for it in &self.appliance_interactions {
            check_nonneg("wattage_w", it.wattage_w)?;
            check_nonneg("usage_hours", it.usage_hours)?;
            if let Some(p) = it.previous_hours {
                check_nonneg("previous_hours", p)?;
            }
        }
        let recomputed = self.recompute_consumption();
        if (recomputed - self.total_consumption_kwh).abs() > CONSUMPTION_TOLERANCE_KWH {
            return Err(InvariantViolation::new(
                "BehavioralSignals.total_consumption_kwh",
                format!(
                    "reported {} kWh but interactions sum to {} kWh",
                    self.total_consumption_kwh, recomputed
                ),
            ));
        }
        for f in &self.emotion_frames {
            f.validate()?;
        }
        Ok(())
    }
}

fn check_nonneg(field: &'static str, v: f64) -> Result<(), InvariantViolation> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(InvariantViolation::new(field, format!("must be a finite non-negative number, got {v}")))
    }
}

/// Seven-emotion probability distribution for one detector frame.
///
/// The sum check runs at construction (including deserialization), so a
/// value of this type always satisfies it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EmotionFields")]
pub struct EmotionDistribution {
    pub happiness: f64,
    pub sadness: f64,
    pub anger: f64,
    pub fear: f64,
    pub disgust: f64,
    pub surprise: f64,
    pub neutral: f64,
    pub frame_at: DateTime<Utc>,
    pub phase: EmotionPhase,
}

/// Unchecked field bundle for building an [`EmotionDistribution`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionFields {
    #[serde(default)]
    pub happiness: f64,
    #[serde(default)]
    pub sadness: f64,
    #[serde(default)]
    pub anger: f64,
    #[serde(default)]
    pub fear: f64,
    #[serde(default)]
    pub disgust: f64,
    #[serde(default)]
    pub surprise: f64,
    #[serde(default)]
    pub neutral: f64,
    pub frame_at: DateTime<Utc>,
    pub phase: EmotionPhase,
}

impl EmotionFields {
    pub fn neutral_dominant(happiness: f64, frame_at: DateTime<Utc>, phase: EmotionPhase) -> Self {
        Self {
            happiness,
            sadness: 0.0,
            anger: 0.0,
            fear: 0.0,
            disgust: 0.0,
            surprise: 0.0,
            neutral: 1.0 - happiness,
            frame_at,
            phase,
        }
    }
}

impl TryFrom<EmotionFields> for EmotionDistribution {
    type Error = InvariantViolation;

    fn try_from(f: EmotionFields) -> Result<Self, Self::Error> {
        let d = EmotionDistribution {
            happiness: f.happiness,
            sadness: f.sadness,
            anger: f.anger,
            fear: f.fear,
            disgust: f.disgust,
            surprise: f.surprise,
            neutral: f.neutral,
            frame_at: f.frame_at,
            phase: f.phase,
        };
        d.validate()?;
        Ok(d)
    }
}

impl EmotionDistribution {
    pub fn new(fields: EmotionFields) -> Result<Self, InvariantViolation> {
        fields.try_into()
    }

    pub fn components(&self) -> [(&'static str, f64); 7] {
        [
            ("happiness", self.happiness),
            ("sadness", self.sadness),
            ("anger", self.anger),
            ("fear", self.fear),
            ("disgust", self.disgust),
            ("surprise", self.surprise),
            ("neutral", self.neutral),
        ]
    }

    pub fn sum(&self) -> f64 {
        self.components().iter().map(|(_, v)| v).sum()
    }

    pub fn with_phase(&self, phase: EmotionPhase) -> Self {
        Self { phase, ..self.clone() }
    }
}

impl Validate for EmotionDistribution {
    fn validate(&self) -> Result<(), InvariantViolation> {
        for (name, v) in self.components() {
            if !(0.0..=1.0).contains(&v) {
                return Err(InvariantViolation::new(
                    "EmotionDistribution",
                    format!("{name} = {v} outside [0, 1]"),
                ));
            }
        }
        let s = self.sum();
        let (lo, hi) = EMOTION_SUM_RANGE;
        if !(lo..=hi).contains(&s) {
            return Err(InvariantViolation::new(
                "EmotionDistribution",
                format!("components sum to {s}, expected within [{lo}, {hi}]"),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strategy {
    pub id: String,
    pub display_name: String,
    pub complexity: Complexity,
    pub compatible_modes: BTreeSet<CognitiveMode>,
    pub compatible_stages: BTreeSet<BehavioralStage>,
    pub min_attention: AttentionLevel,
    /// One-paragraph description handed to the language model.
    #[serde(default)]
    pub description: String,
    /// Rule-based message templates; regeneration attempts cycle through them.
    #[serde(default)]
    pub message_templates: Vec<String>,
}

impl Strategy {
    pub fn accepts(&self, profile: &UserProfile) -> bool {
        self.compatible_modes.contains(&profile.cognitive)
            && self.compatible_stages.contains(&profile.stage)
            && profile.attention >= self.min_attention
    }
}

impl Validate for Strategy {
    fn validate(&self) -> Result<(), InvariantViolation> {
        if self.id.trim().is_empty() {
            return Err(InvariantViolation::new("Strategy.id", "empty id"));
        }
        if self.compatible_modes.is_empty() {
            return Err(InvariantViolation::new(
                "Strategy.compatible_modes",
                format!("{}: compatibility set is empty", self.id),
            ));
        }
        if self.compatible_stages.is_empty() {
            return Err(InvariantViolation::new(
                "Strategy.compatible_stages",
                format!("{}: compatibility set is empty", self.id),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UiContext {
    pub font_size_px: u32,
    pub primary_color: String,
    pub secondary_color: String,
    pub chart_type: ChartType,
}

/// `#RRGGBB` check.
pub fn is_hex_color(s: &str) -> bool {
    s.len() == 7 && s.starts_with('#') && s[1..].chars().all(|c| c.is_ascii_hexdigit())
}

impl Validate for UiContext {
    fn validate(&self) -> Result<(), InvariantViolation> {
        if !(MIN_FONT_PX..=MAX_FONT_PX).contains(&self.font_size_px) {
            return Err(InvariantViolation::new(
                "UIContext.font_size_px",
                format!("{} outside [{MIN_FONT_PX}, {MAX_FONT_PX}]", self.font_size_px),
            ));
        }
        for (field, c) in [("primary_color", &self.primary_color), ("secondary_color", &self.secondary_color)] {
            if !is_hex_color(c) {
                return Err(InvariantViolation::new(
                    "UIContext",
                    format!("{field} {c:?} is not #RRGGBB"),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NudgeDelivery {
    pub nudge_id: NudgeId,
    pub strategy_id: String,
    pub message: String,
    pub explanation: String,
    pub ui: UiContext,
    pub profile: UserProfile,
    pub delivered_at: DateTime<Utc>,
}

impl NudgeDelivery {
    /// Structural checks only; taxonomy membership is a compliance rule.
    pub fn check_structure(&self) -> Result<(), InvariantViolation> {
        if self.strategy_id.trim().is_empty() {
            return Err(InvariantViolation::new("NudgeDelivery.strategy_id", "empty"));
        }
        self.ui.validate()?;
        self.profile.validate()
    }
}

impl Validate for NudgeDelivery {
    fn validate(&self) -> Result<(), InvariantViolation> {
        if self.message.trim().is_empty() {
            return Err(InvariantViolation::new("NudgeDelivery.message", "empty message"));
        }
        if self.explanation.trim().is_empty() {
            return Err(InvariantViolation::new("NudgeDelivery.explanation", "empty explanation"));
        }
        self.check_structure()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub nudge_id: NudgeId,
    pub thumbs: Thumbs,
    pub recorded_at: DateTime<Utc>,
}

impl Validate for FeedbackRecord {
    fn validate(&self) -> Result<(), InvariantViolation> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub session_id: SessionId,
    pub seq: u64,
    pub stage: TraceStage,
    pub at: DateTime<Utc>,
    /// Canonical serialization of the stage output.
    pub payload: String,
}

impl Validate for TraceRecord {
    fn validate(&self) -> Result<(), InvariantViolation> {
        if self.seq == 0 {
            return Err(InvariantViolation::new("TraceRecord.seq", "sequence numbers start at 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub rule_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplianceVerdict {
    pub passed: bool,
    pub violations: Vec<Violation>,
    pub checked_at: DateTime<Utc>,
}

impl ComplianceVerdict {
    pub fn from_violations(violations: Vec<Violation>, checked_at: DateTime<Utc>) -> Self {
        Self { passed: violations.is_empty(), violations, checked_at }
    }

    pub fn violated_rules(&self) -> Vec<&str> {
        self.violations.iter().map(|v| v.rule_id.as_str()).collect()
    }
}

impl Validate for ComplianceVerdict {
    fn validate(&self) -> Result<(), InvariantViolation> {
        if self.passed != self.violations.is_empty() {
            return Err(InvariantViolation::new(
                "ComplianceVerdict",
                "passed must hold exactly when there are no violations",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub delivered: u64,
    pub blocked: u64,
    pub strategy_histogram: BTreeMap<String, u64>,
}

impl GroupStats {
    /// Blocked share of all verdict outcomes; `None` with no outcomes.
    pub fn block_rate(&self) -> Option<f64> {
        let total = self.delivered + self.blocked;
        (total > 0).then(|| self.blocked as f64 / total as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub grouping_key: String,
    pub per_group: BTreeMap<String, GroupStats>,
    /// Max/min block-rate ratio. Infinite when some eligible group has a
    /// zero block rate and another does not; encoded as the string "inf".
    #[serde(with = "ratio_serde")]
    pub disparity_ratio: f64,
    pub flagged: bool,
    pub threshold: f64,
}

impl Validate for FairnessReport {
    fn validate(&self) -> Result<(), InvariantViolation> {
        if self.disparity_ratio.is_nan() || self.disparity_ratio < 1.0 {
            return Err(InvariantViolation::new(
                "FairnessReport.disparity_ratio",
                format!("{} is below 1", self.disparity_ratio),
            ));
        }
        if self.flagged != (self.disparity_ratio > self.threshold) {
            return Err(InvariantViolation::new(
                "FairnessReport.flagged",
                "flag must equal ratio > threshold",
            ));
        }
        Ok(())
    }
}

mod ratio_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad ratio {t:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t0() -> DateTime<Utc> {
        "2025-03-03T09:30:00Z".parse().unwrap()
    }

    fn interaction(id: &str, w: f64, h: f64, action: ApplianceAction) -> ApplianceInteraction {
        ApplianceInteraction {
            appliance_id: id.into(),
            wattage_w: w,
            usage_hours: h,
            action,
            applied: true,
            previous_hours: None,
        }
    }

    #[test]
    fn stage_order_is_declaration_order() {
        use BehavioralStage::*;
        assert!(PreContemplation < Contemplation);
        assert!(Contemplation < Preparation);
        assert!(Preparation < Action);
        assert!(Action < Maintenance);
        assert!(AttentionLevel::Low < AttentionLevel::Medium);
        assert!(AttentionLevel::Medium < AttentionLevel::High);
    }

    #[test]
    fn labels_are_snake_case_and_parse_back() {
        assert_eq!(BehavioralStage::PreContemplation.label(), "pre_contemplation");
        assert_eq!("Pre-Contemplation".parse::<BehavioralStage>().unwrap(), BehavioralStage::PreContemplation);
        assert_eq!(
            serde_json::to_string(&TraceStage::UiAdaptation).unwrap(),
            "\"ui_adaptation\""
        );
        assert!("sideways".parse::<AttentionLevel>().is_err());
        assert_eq!(ReasonerKind::parse_loose("rule").unwrap(), ReasonerKind::RuleBased);
        assert_eq!(ReasonerKind::parse_loose("llm").unwrap(), ReasonerKind::LlmBacked);
    }

    #[test]
    fn consumption_follows_current_set() {
        let mut sig = BehavioralSignals {
            appliance_interactions: vec![
                interaction("heater", 2000.0, 3.0, ApplianceAction::Add),
                interaction("lamp", 60.0, 5.0, ApplianceAction::Add),
            ],
            ..Default::default()
        };
        assert!((sig.recompute_consumption() - 6.3).abs() < 1e-12);
        sig.appliance_interactions.push(interaction("heater", 2000.0, 3.0, ApplianceAction::TurnOff));
        assert!((sig.recompute_consumption() - 0.3).abs() < 1e-12);
        sig.appliance_interactions.push(interaction("lamp", 60.0, 5.0, ApplianceAction::Remove));
        assert_eq!(sig.recompute_consumption(), 0.0);
        // Heater is off, so the top appliance falls back to interactions.
        assert_eq!(sig.top_appliance().unwrap().appliance_id, "heater");
    }

    #[test]
    fn planned_adjustment_does_not_change_hours() {
        let mut planned = interaction("heater", 2000.0, 1.0, ApplianceAction::AdjustHours);
        planned.applied = false;
        planned.previous_hours = Some(3.0);
        let sig = BehavioralSignals {
            appliance_interactions: vec![interaction("heater", 2000.0, 3.0, ApplianceAction::Add), planned],
            ..Default::default()
        };
        assert!((sig.recompute_consumption() - 6.0).abs() < 1e-12);
        assert!(sig.appliance_interactions[1].is_planned_reduction());
        assert!(!sig.has_applied_reduction());
    }

    #[test]
    fn emotion_sum_enforced_on_construction_and_deserialization() {
        let ok = EmotionDistribution::new(EmotionFields::neutral_dominant(0.00017, t0(), EmotionPhase::PreNudge));
        assert!(ok.is_ok());
        let mut bad = EmotionFields::neutral_dominant(0.5, t0(), EmotionPhase::PreNudge);
        bad.neutral = 1.0;
        assert!(EmotionDistribution::new(bad.clone()).is_err());
        let json = serde_json::to_string(&bad).unwrap();
        assert!(serde_json::from_str::<EmotionDistribution>(&json).is_err());
        let mut neg = EmotionFields::neutral_dominant(0.0, t0(), EmotionPhase::PreNudge);
        neg.anger = -0.01;
        neg.neutral = 1.01;
        assert!(EmotionDistribution::new(neg).is_err());
    }

    #[test]
    fn ui_context_bounds() {
        let mut ui = UiContext {
            font_size_px: 24,
            primary_color: "#1F4E79".into(),
            secondary_color: "#9dc3e6".into(),
            chart_type: ChartType::Bar,
        };
        assert!(ui.validate().is_ok());
        ui.font_size_px = 11;
        assert!(ui.validate().is_err());
        ui.font_size_px = 16;
        ui.primary_color = "blue".into();
        assert!(ui.validate().is_err());
    }

    #[test]
    fn verdict_invariant() {
        let v = ComplianceVerdict::from_violations(vec![], t0());
        assert!(v.passed);
        let v = ComplianceVerdict::from_violations(
            vec![Violation { rule_id: "x".into(), reason: "y".into() }],
            t0(),
        );
        assert!(!v.passed);
        let broken = ComplianceVerdict { passed: true, ..v };
        assert!(broken.validate().is_err());
    }

    #[test]
    fn complexity_distance() {
        assert_eq!(Complexity::Low.distance_to(AttentionLevel::High), 2);
        assert_eq!(Complexity::Medium.distance_to(AttentionLevel::High), 1);
        assert_eq!(Complexity::High.distance_to(AttentionLevel::High), 0);
    }
}
