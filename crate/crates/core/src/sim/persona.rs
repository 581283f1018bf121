//! Personas: parameterized synthetic users and the event streams they emit.

use std::path::Path;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::capture::{capture_context, ingest_signals, EventKind, RawEvent};
use crate::config::Settings;
use crate::domain::*;
use crate::modeling::{classify_cognitive_rule, classify_stage_rule, estimate_attention_rule, History};
use crate::orchestrator::engine::{ContextInput, NewSession, PriorFeedback};

pub const REFERENCE_PERSONAS: &str = include_str!("../../assets/personas/reference.json");

/// First simulated day; every session starts on it at the persona's hour.
pub fn base_day() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2025, 3, 3, 0, 0, 0).unwrap()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileTarget {
    pub cognitive: CognitiveMode,
    pub stage: BehavioralStage,
    pub attention: AttentionLevel,
}

impl ProfileTarget {
    pub fn of(p: &UserProfile) -> Self {
        Self { cognitive: p.cognitive, stage: p.stage, attention: p.attention }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApplianceSpec {
    pub appliance_id: String,
    pub wattage_w: f64,
    pub usage_hours: f64,
}

/// Two-point emotion model: a neutral-dominant pre-nudge frame and a
/// post-nudge frame with happiness raised by `happiness_delta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmotionSpec {
    pub pre_happiness: f64,
    pub happiness_delta: f64,
    #[serde(default)]
    pub pre_sadness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedFeedback {
    pub strategy_id: String,
    pub thumbs: Thumbs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Persona {
    pub name: String,
    pub target_profile: ProfileTarget,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_strategy: Option<String>,
    pub device: Device,
    pub local_hour: u32,
    /// Inclusive bounds.
    pub click_range: [u64; 2],
    /// Inclusive bounds on the single focus-to-action latency.
    pub hesitation_ms: [u64; 2],
    pub appliances: Vec<ApplianceSpec>,
    /// Chance of opening the detail view of each high-wattage appliance.
    pub view_probability: f64,
    /// Chance of switching off the largest appliance.
    pub reducing_action_probability: f64,
    /// Chance of planning, without applying, fewer hours on the largest appliance.
    #[serde(default)]
    pub planning_probability: f64,
    #[serde(default)]
    pub prior_reducing_sessions: usize,
    #[serde(default)]
    pub prior_feedback: Vec<SeedFeedback>,
    pub emotion: EmotionSpec,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PersonaError {
    #[error("persona {persona}: {reason}")]
    Invalid { persona: String, reason: String },
    #[error("persona {persona}: dry run gives {dimension} = {got}, target is {expected}")]
    Mismatch { persona: String, dimension: &'static str, expected: String, got: String },
    #[error("cannot read personas: {0}")]
    Io(String),
    #[error("invalid persona file: {0}")]
    Parse(String),
}

/// Everything a driver needs to replay one session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedSession {
    pub session_id: SessionId,
    pub persona: String,
    pub target_profile: ProfileTarget,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_strategy: Option<String>,
    pub new_session: NewSession,
    pub context: ContextInput,
    pub events: Vec<RawEvent>,
    pub pre_frame: EmotionDistribution,
    pub post_frame: EmotionDistribution,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PersonaFile {
    Bare(Vec<Persona>),
    Wrapped { personas: Vec<Persona> },
}

pub fn parse_personas(text: &str) -> Result<Vec<Persona>, PersonaError> {
    let list = match serde_json::from_str::<PersonaFile>(text).map_err(|e| PersonaError::Parse(e.to_string()))? {
        PersonaFile::Bare(v) | PersonaFile::Wrapped { personas: v } => v,
    };
    for p in &list {
        p.check()?;
    }
    Ok(list)
}

/// Loads and dry-runs every persona in the file.
pub fn load_personas(path: &Path, settings: &Settings) -> Result<Vec<Persona>, PersonaError> {
    let text = std::fs::read_to_string(path).map_err(|e| PersonaError::Io(format!("{}: {e}", path.display())))?;
    let list = parse_personas(&text)?;
    for p in &list {
        dry_run(p, p.seed, settings)?;
    }
    Ok(list)
}

pub fn reference_personas() -> Vec<Persona> {
    parse_personas(REFERENCE_PERSONAS).expect("shipped personas parse")
}

fn unit(p: f64) -> bool {
    (0.0..=1.0).contains(&p)
}

impl Persona {
    fn check(&self) -> Result<(), PersonaError> {
        let bad = |reason: &str| Err(PersonaError::Invalid { persona: self.name.clone(), reason: reason.into() });
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return bad("name must be non-empty ASCII letters, digits, '_' or '-'");
        }
        if self.local_hour > 23 {
            return bad("local_hour must be 0..=23");
        }
        if self.click_range[0] > self.click_range[1] || self.hesitation_ms[0] > self.hesitation_ms[1] {
            return bad("range bounds are reversed");
        }
        if ![self.view_probability, self.reducing_action_probability, self.planning_probability].into_iter().all(unit) {
            return bad("probabilities must lie in [0, 1]");
        }
        for a in &self.appliances {
            if a.appliance_id.is_empty() || !(a.wattage_w >= 0.0 && a.usage_hours >= 0.0) {
                return bad("appliances need an id and non-negative wattage and hours");
            }
        }
        let e = &self.emotion;
        if !(unit(e.pre_happiness) && unit(e.pre_sadness) && unit(e.pre_happiness + e.happiness_delta))
            || e.pre_happiness + e.pre_sadness > 1.0
        {
            return bad("emotion parameters leave [0, 1]");
        }
        Ok(())
    }
}

fn seed_for(persona: &Persona, seed: u64) -> u64 {
    persona.seed ^ seed.rotate_left(32) ^ 0x9E37_79B9_7F4A_7C15
}

fn largest(appliances: &[ApplianceSpec]) -> Option<&ApplianceSpec> {
    appliances.iter().max_by(|a, b| {
        (a.wattage_w * a.usage_hours)
            .total_cmp(&(b.wattage_w * b.usage_hours))
            .then_with(|| b.appliance_id.cmp(&a.appliance_id))
    })
}

fn frame(spec: &EmotionSpec, phase: EmotionPhase, at: DateTime<Utc>) -> EmotionDistribution {
    let (happiness, sadness) = match phase {
        EmotionPhase::PreNudge => (spec.pre_happiness, spec.pre_sadness),
        EmotionPhase::PostNudge => (spec.pre_happiness + spec.happiness_delta, spec.pre_sadness),
    };
    let mut f = EmotionFields::neutral_dominant(happiness, at, phase);
    f.sadness = sadness;
    f.neutral = (1.0 - happiness - sadness).max(0.0);
    EmotionDistribution::new(f).expect("checked persona yields a valid distribution")
}

/// Signals standing for one earlier session in which the user switched the
/// largest appliance off.
fn reducing_session(persona: &Persona) -> BehavioralSignals {
    let Some(a) = largest(&persona.appliances) else { return BehavioralSignals::default() };
    let mk = |action| ApplianceInteraction {
        appliance_id: a.appliance_id.clone(),
        wattage_w: a.wattage_w,
        usage_hours: a.usage_hours,
        action,
        applied: true,
        previous_hours: None,
    };
    let mut s = BehavioralSignals {
        appliance_interactions: vec![mk(ApplianceAction::Add), mk(ApplianceAction::TurnOff)],
        ..Default::default()
    };
    s.total_consumption_kwh = s.recompute_consumption();
    s
}

/// Deterministic event stream for `(persona, seed)`, refused when the rule
/// classifiers would not reproduce the persona's target profile.
pub fn simulate_session(persona: &Persona, seed: u64, settings: &Settings) -> Result<SimulatedSession, PersonaError> {
    let s = generate(persona, seed, &SessionId::new(persona.name.clone()));
    check_profile(persona, &s, settings)?;
    Ok(s)
}

/// Like [`simulate_session`] with an explicit session id.
pub fn simulate_session_as(
    persona: &Persona,
    seed: u64,
    session_id: SessionId,
    settings: &Settings,
) -> Result<SimulatedSession, PersonaError> {
    let s = generate(persona, seed, &session_id);
    check_profile(persona, &s, settings)?;
    Ok(s)
}

fn generate(persona: &Persona, seed: u64, id: &SessionId) -> SimulatedSession {
    let mut rng = ChaCha8Rng::seed_from_u64(seed_for(persona, seed));
    let start = base_day() + Duration::hours(persona.local_hour as i64);
    let mut at = start;
    let mut events = vec![RawEvent::new(id, EventKind::PageFocus, at)];
    let hesitation = rng.gen_range(persona.hesitation_ms[0]..=persona.hesitation_ms[1]);
    at += Duration::milliseconds(hesitation as i64);
    let clicks = rng.gen_range(persona.click_range[0]..=persona.click_range[1]);
    let appliance = |at, a: &ApplianceSpec, action: &str| {
        RawEvent::new(id, EventKind::ApplianceAction, at)
            .with("appliance_id", a.appliance_id.as_str())
            .with("wattage_w", a.wattage_w)
            .with("usage_hours", a.usage_hours)
            .with("action", action)
    };
    // The first action closes the focus pair, so the session's mean
    // hesitation is exactly the drawn latency.
    for a in &persona.appliances {
        events.push(appliance(at, a, "add"));
        at += Duration::seconds(1);
    }
    for _ in 0..clicks {
        events.push(RawEvent::new(id, EventKind::Click, at));
        at += Duration::milliseconds(rng.gen_range(300..1500));
    }
    let high_w = 1000.0;
    for a in persona.appliances.iter().filter(|a| a.wattage_w >= high_w) {
        if rng.gen_bool(persona.view_probability) {
            events.push(appliance(at, a, "view"));
            at += Duration::seconds(2);
        }
    }
    if let Some(top) = largest(&persona.appliances) {
        if rng.gen_bool(persona.planning_probability) {
            let planned = top.usage_hours / 2.0;
            events.push(
                RawEvent::new(id, EventKind::ApplianceAction, at)
                    .with("appliance_id", top.appliance_id.as_str())
                    .with("wattage_w", top.wattage_w)
                    .with("usage_hours", planned)
                    .with("previous_hours", top.usage_hours)
                    .with("action", "adjust_hours")
                    .with("applied", false),
            );
            at += Duration::seconds(2);
        }
        if rng.gen_bool(persona.reducing_action_probability) {
            events.push(appliance(at, top, "turn_off"));
        }
    }
    // Events in a first appliance-free session still need the focus pair closed.
    if persona.appliances.is_empty() && clicks == 0 {
        events.push(RawEvent::new(id, EventKind::Hover, at));
    }
    let prior_sessions = (0..persona.prior_reducing_sessions).map(|_| reducing_session(persona)).collect();
    let prior_feedback = persona
        .prior_feedback
        .iter()
        .enumerate()
        .map(|(i, f)| PriorFeedback {
            strategy_id: f.strategy_id.clone(),
            thumbs: f.thumbs,
            recorded_at: base_day() - Duration::days(1) + Duration::minutes(i as i64),
        })
        .collect();
    SimulatedSession {
        session_id: id.clone(),
        persona: persona.name.clone(),
        target_profile: persona.target_profile,
        expected_strategy: persona.expected_strategy.clone(),
        new_session: NewSession { session_id: Some(id.clone()), prior_sessions, prior_feedback },
        context: ContextInput { device: persona.device, at: start.to_rfc3339(), utc_offset_minutes: 0 },
        events,
        pre_frame: frame(&persona.emotion, EmotionPhase::PreNudge, start),
        post_frame: frame(&persona.emotion, EmotionPhase::PostNudge, at + Duration::seconds(30)),
    }
}

/// Rule-based profile of a simulated session.
pub fn classify(s: &SimulatedSession, settings: &Settings) -> Result<ProfileTarget, String> {
    let ctx = capture_context(&s.session_id, s.context.device, &s.context.at, s.context.utc_offset_minutes, &settings.capture)
        .map_err(|e| e.to_string())?;
    let sig = ingest_signals(&s.session_id, &s.events).map_err(|e| e.to_string())?;
    let history = History { feedback: Vec::new(), prior_sessions: s.new_session.prior_sessions.clone() };
    let th = &settings.modeling;
    Ok(ProfileTarget {
        cognitive: classify_cognitive_rule(&sig, th),
        stage: classify_stage_rule(&sig, &history, th),
        attention: estimate_attention_rule(&ctx, &sig, th),
    })
}

fn check_profile(persona: &Persona, s: &SimulatedSession, settings: &Settings) -> Result<(), PersonaError> {
    let got = classify(s, settings).map_err(|reason| PersonaError::Invalid { persona: persona.name.clone(), reason })?;
    let want = persona.target_profile;
    let mismatch = |dimension, expected: String, got: String| {
        Err(PersonaError::Mismatch { persona: persona.name.clone(), dimension, expected, got })
    };
    if got.cognitive != want.cognitive {
        return mismatch("cognitive_mode", want.cognitive.to_string(), got.cognitive.to_string());
    }
    if got.stage != want.stage {
        return mismatch("behavioral_stage", want.stage.to_string(), got.stage.to_string());
    }
    if got.attention != want.attention {
        return mismatch("attention", want.attention.to_string(), got.attention.to_string());
    }
    Ok(())
}

/// Checks that `(persona, seed)` reproduces the target profile.
pub fn dry_run(persona: &Persona, seed: u64, settings: &Settings) -> Result<ProfileTarget, PersonaError> {
    simulate_session(persona, seed, settings).map(|s| s.target_profile)
}

const CATALOG: [(&str, f64, [f64; 2]); 8] = [
    ("heater", 2000.0, [1.0, 6.0]),
    ("kettle", 2200.0, [0.5, 1.0]),
    ("oven", 2400.0, [0.5, 2.0]),
    ("dishwasher", 1800.0, [1.0, 2.0]),
    ("washing_machine", 500.0, [1.0, 2.0]),
    ("fridge", 150.0, [24.0, 24.0]),
    ("tv", 120.0, [1.0, 6.0]),
    ("lamp", 60.0, [2.0, 8.0]),
];

fn bit(rng: &mut ChaCha8Rng, p: f64) -> f64 {
    if rng.gen_bool(p) { 1.0 } else { 0.0 }
}

/// `n` personas with randomly drawn parameters. Ranges collapse to points and
/// probabilities to 0 or 1, so the profile does not depend on the session
/// seed; each target is the dry-run result of the persona's own parameters.
pub fn random_personas(n: usize, seed: u64, settings: &Settings) -> Vec<Persona> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let k = rng.gen_range(0..=4usize);
            let mut picks: Vec<usize> = (0..CATALOG.len()).collect();
            for j in 0..k {
                let r = rng.gen_range(j..picks.len());
                picks.swap(j, r);
            }
            let appliances = picks[..k]
                .iter()
                .map(|&c| {
                    let (id, w, [lo, hi]) = CATALOG[c];
                    let half_hours = rng.gen_range((lo * 2.0) as u32..=(hi * 2.0) as u32);
                    ApplianceSpec { appliance_id: id.into(), wattage_w: w, usage_hours: half_hours as f64 / 2.0 }
                })
                .collect();
            let clicks = rng.gen_range(0..25u64);
            let hesitation = rng.gen_range(200..10_000u64);
            let feedback_ids = ["just_in_time", "reduce_distance", "raise_visibility", "remind_consequences", "enable_comparisons"];
            let prior_feedback = (0..rng.gen_range(0..3usize))
                .map(|_| SeedFeedback {
                    strategy_id: feedback_ids[rng.gen_range(0..feedback_ids.len())].into(),
                    thumbs: if rng.gen_bool(0.7) { Thumbs::Down } else { Thumbs::Up },
                })
                .collect();
            let sad = rng.gen_bool(0.2);
            let mut p = Persona {
                name: format!("random_{i:03}"),
                target_profile: ProfileTarget {
                    cognitive: CognitiveMode::Intuitive,
                    stage: BehavioralStage::PreContemplation,
                    attention: AttentionLevel::High,
                },
                expected_strategy: None,
                device: if rng.gen_bool(0.5) { Device::Desktop } else { Device::Mobile },
                local_hour: rng.gen_range(0..24),
                click_range: [clicks, clicks],
                hesitation_ms: [hesitation, hesitation],
                appliances,
                view_probability: bit(&mut rng, 0.6),
                reducing_action_probability: bit(&mut rng, 0.3),
                planning_probability: bit(&mut rng, 0.2),
                prior_reducing_sessions: if rng.gen_bool(0.15) { 3 } else { rng.gen_range(0..3) },
                prior_feedback,
                emotion: EmotionSpec {
                    pre_happiness: rng.gen_range(50..300u32) as f64 / 1e6,
                    happiness_delta: rng.gen_range(100..600u32) as f64 / 1e6,
                    pre_sadness: if sad { 0.6 } else { 0.0 },
                },
                seed: rng.gen(),
            };
            let s = generate(&p, p.seed, &SessionId::new(p.name.clone()));
            p.target_profile = classify(&s, settings).expect("generated events are valid");
            p
        })
        .collect()
}
