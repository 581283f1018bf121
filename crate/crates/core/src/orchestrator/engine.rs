//! The sequential pipeline and the session operations around it.

use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::canonical::{to_canonical_string, Validate};
use crate::capture::{capture_context, CaptureError, RawEvent};
use crate::config::Settings;
use crate::domain::*;
use crate::gateway::mock::MockTable;
use crate::gateway::template::TemplateCatalog;
use crate::gateway::Gateway;
use crate::guardrails::compliance::{validate_nudge, ComplianceContext, RuleSet};
use crate::guardrails::emotion::{emotion_delta, EmotionDelta};
use crate::guardrails::fairness::{audit_fairness, FairnessError};
use crate::guardrails::prompts::GuardrailSet;
use crate::guardrails::trace::{TraceError, TraceLog};
use crate::intelligence::generation::{GenerationError, GenerationRequest, NudgeGenerator, StandardGenerator};
use crate::intelligence::selection::{select_strategy, SelectionError};
use crate::intelligence::taxonomy::StrategyTaxonomy;
use crate::intelligence::ui::adapt_ui;
use crate::modeling::{build_profile, FeedbackEntry};
use crate::orchestrator::explain::{explain, Explanation};
use crate::orchestrator::store::{FileStore, MemoryStore, SessionState, SessionStore, StoreError};

pub const INSUFFICIENT_DATA: &str = "insufficient_data";
pub const PROFILING_FAILED: &str = "profiling_failed";
pub const NO_STRATEGY: &str = "no_strategy";
pub const GENERATION_FAILED: &str = "generation_failed";
pub const COMPLIANCE_EXHAUSTED: &str = "compliance_exhausted";

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Always answers the same instant. Replays use it so payloads that carry
/// timestamps stay byte-identical.
#[derive(Debug, Clone, Copy)]
pub struct FixedClock(pub DateTime<Utc>);

impl Clock for FixedClock {
    fn now(&self) -> DateTime<Utc> {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    Delivered,
    NoNudge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutcome {
    pub kind: OutcomeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delivery: Option<NudgeDelivery>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl PipelineOutcome {
    pub fn delivered(d: NudgeDelivery) -> Self {
        Self { kind: OutcomeKind::Delivered, delivery: Some(d), reason: None }
    }

    pub fn no_nudge(reason: &str) -> Self {
        Self { kind: OutcomeKind::NoNudge, delivery: None, reason: Some(reason.to_string()) }
    }

    pub fn is_delivered(&self) -> bool {
        self.kind == OutcomeKind::Delivered
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("unknown session {0}")]
    UnknownSession(SessionId),
    #[error("session {0} already exists")]
    SessionExists(SessionId),
    #[error("invalid session id {0:?}: use 1-128 letters, digits, '-', '_' or '.'")]
    BadSessionId(String),
    #[error("nudge {nudge} was not delivered in session {session}")]
    UnknownNudge { session: SessionId, nudge: NudgeId },
    #[error(transparent)]
    Capture(#[from] CaptureError),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Fairness(#[from] FairnessError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("engine setup failed: {0}")]
    Setup(String),
}

/// Feedback given before this session, on nudges the session never saw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorFeedback {
    pub strategy_id: String,
    pub thumbs: Thumbs,
    pub recorded_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewSession {
    #[serde(default)]
    pub session_id: Option<SessionId>,
    #[serde(default)]
    pub prior_sessions: Vec<BehavioralSignals>,
    #[serde(default)]
    pub prior_feedback: Vec<PriorFeedback>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextInput {
    pub device: Device,
    /// RFC 3339.
    pub at: String,
    #[serde(default)]
    pub utc_offset_minutes: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestAck {
    pub batches: u64,
    pub events: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auto_run: Option<PipelineOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionAck {
    pub seq: u64,
    pub phase: EmotionPhase,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<EmotionDelta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackAck {
    pub record: FeedbackRecord,
    pub strategy_id: String,
    /// True when this nudge already had feedback; the first record stands.
    pub duplicate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationView {
    pub nudge_id: NudgeId,
    pub strategy_id: String,
    pub explanation: String,
}

#[derive(Serialize)]
struct DraftTrace<'a> {
    nudge_id: &'a NudgeId,
    strategy_id: &'a str,
    attempt: u32,
    message: &'a str,
    reasoner: ReasonerKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    fallback: Option<&'a str>,
    explanation: &'a Explanation,
}

#[derive(Serialize)]
struct VerdictTrace<'a> {
    verdict: &'a ComplianceVerdict,
    #[serde(flatten)]
    draft: &'a NudgeDelivery,
}

#[derive(Serialize)]
struct EmotionTrace<'a> {
    frame: &'a EmotionDistribution,
    #[serde(skip_serializing_if = "Option::is_none")]
    delta: Option<&'a EmotionDelta>,
}

fn valid_session_id(s: &str) -> bool {
    (1..=128).contains(&s.len())
        && !s.starts_with('.')
        && s.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

fn regeneration_hint(verdict: &ComplianceVerdict) -> String {
    let reasons = verdict
        .violations
        .iter()
        .map(|v| format!("{}: {}", v.rule_id, v.reason))
        .collect::<Vec<_>>()
        .join("; ");
    format!(
        "The previous draft was rejected ({reasons}). Write a new one that cites only the figures given, \
         applies no pressure and leaves the choice with the user."
    )
}

pub struct Engine {
    settings: Settings,
    taxonomy: StrategyTaxonomy,
    rules: RuleSet,
    gateway: Gateway,
    generator: Arc<dyn NudgeGenerator>,
    store: Box<dyn SessionStore>,
    traces: Arc<TraceLog>,
    clock: Box<dyn Clock>,
    locks: Mutex<HashMap<SessionId, Arc<Mutex<()>>>>,
    created: AtomicU64,
}

impl Engine {
    pub fn new(settings: Settings, taxonomy: StrategyTaxonomy, rules: RuleSet, gateway: Gateway) -> Self {
        Self {
            settings,
            taxonomy,
            rules,
            gateway,
            generator: Arc::new(StandardGenerator),
            store: Box::new(MemoryStore::new()),
            traces: Arc::new(TraceLog::in_memory()),
            clock: Box::new(SystemClock),
            locks: Mutex::new(HashMap::new()),
            created: AtomicU64::new(0),
        }
    }

    /// Loads every data file the settings name, shipped defaults otherwise.
    pub fn from_settings(settings: Settings) -> Result<Self, EngineError> {
        let setup = |what: &str, e: &dyn std::fmt::Display| EngineError::Setup(format!("{what}: {e}"));
        let p = settings.paths.clone();
        let taxonomy = match &p.taxonomy {
            Some(path) => StrategyTaxonomy::load(path).map_err(|e| setup("taxonomy", &e))?,
            None => StrategyTaxonomy::default(),
        };
        let guardrails = match &p.guardrails {
            Some(path) => GuardrailSet::load(path).map_err(|e| setup("guardrails", &e))?,
            None => GuardrailSet::default(),
        };
        let rules = match &p.rules {
            Some(path) => RuleSet::load(path, p.lexicon_dir.as_deref()).map_err(|e| setup("rules", &e))?,
            None => RuleSet::parse(crate::guardrails::compliance::DEFAULT_RULES, p.lexicon_dir.as_deref())
                .map_err(|e| setup("rules", &e))?,
        };
        let catalog = match &p.templates {
            Some(dir) => TemplateCatalog::load_dir(dir).map_err(|e| setup("templates", &e))?,
            None => TemplateCatalog::default(),
        };
        let mock = match &p.mock_table {
            Some(path) => MockTable::load(path).map_err(|e| setup("mock table", &e))?,
            None => MockTable::default(),
        };
        let gateway = Gateway::from_settings(catalog, guardrails, mock, &settings.llm).map_err(|e| setup("gateway", &e))?;
        let mut engine = Self::new(settings, taxonomy, rules, gateway);
        if let Some(path) = &p.trace_csv {
            engine.traces = Arc::new(TraceLog::open_csv(path)?);
        }
        if let Some(dir) = &p.session_dir {
            engine.store = Box::new(FileStore::open(dir)?);
        }
        Ok(engine)
    }

    pub fn with_generator(mut self, generator: Arc<dyn NudgeGenerator>) -> Self {
        self.generator = generator;
        self
    }

    pub fn with_store(mut self, store: Box<dyn SessionStore>) -> Self {
        self.store = store;
        self
    }

    pub fn with_traces(mut self, traces: Arc<TraceLog>) -> Self {
        self.traces = traces;
        self
    }

    pub fn with_clock(mut self, clock: Box<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn settings(&self) -> &Settings {
        &self.settings
    }

    pub fn taxonomy(&self) -> &StrategyTaxonomy {
        &self.taxonomy
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn traces(&self) -> &Arc<TraceLog> {
        &self.traces
    }

    fn session_lock(&self, id: &SessionId) -> Arc<Mutex<()>> {
        self.locks
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .entry(id.clone())
            .or_default()
            .clone()
    }

    /// Runs `f` on the session's state under its lock and saves the result.
    fn with_session<T>(
        &self,
        id: &SessionId,
        f: impl FnOnce(&mut SessionState) -> Result<T, EngineError>,
    ) -> Result<T, EngineError> {
        let lock = self.session_lock(id);
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        let mut st = self.store.load(id)?.ok_or_else(|| EngineError::UnknownSession(id.clone()))?;
        let out = f(&mut st)?;
        self.store.save(&st)?;
        Ok(out)
    }

    pub fn session(&self, id: &SessionId) -> Result<SessionState, EngineError> {
        self.store.load(id)?.ok_or_else(|| EngineError::UnknownSession(id.clone()))
    }

    fn trace<T: Serialize + ?Sized>(&self, id: &SessionId, stage: TraceStage, value: &T) -> Result<u64, EngineError> {
        let payload = to_canonical_string(value).map_err(|e| EngineError::Invalid(e.to_string()))?;
        Ok(self.traces.append(id, stage, self.clock.now(), payload)?)
    }

    fn trace_valid<T: Serialize + Validate>(&self, id: &SessionId, stage: TraceStage, value: &T) -> Result<u64, EngineError> {
        value.validate().map_err(|e| EngineError::Invalid(e.to_string()))?;
        self.trace(id, stage, value)
    }

    pub fn create_session(&self, req: NewSession) -> Result<SessionId, EngineError> {
        for s in &req.prior_sessions {
            s.validate().map_err(|e| EngineError::Invalid(e.to_string()))?;
        }
        let id = match req.session_id {
            Some(id) if !valid_session_id(id.as_str()) => return Err(EngineError::BadSessionId(id.0)),
            Some(id) => id,
            None => loop {
                let n = self.created.fetch_add(1, Ordering::Relaxed) + 1;
                let id = SessionId::new(format!("session-{n:06}"));
                if self.store.load(&id)?.is_none() {
                    break id;
                }
            },
        };
        let lock = self.session_lock(&id);
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        if self.store.load(&id)?.is_some() {
            return Err(EngineError::SessionExists(id));
        }
        let mut st = SessionState::new(id.clone());
        st.history.prior_sessions = req.prior_sessions;
        for (i, f) in req.prior_feedback.into_iter().enumerate() {
            let entry = FeedbackEntry {
                record: FeedbackRecord {
                    nudge_id: NudgeId::new(format!("{id}-prior-{}", i + 1)),
                    thumbs: f.thumbs,
                    recorded_at: f.recorded_at,
                },
                strategy_id: f.strategy_id,
            };
            self.trace(&id, TraceStage::Feedback, &entry)?;
            st.history.feedback.push(entry);
        }
        self.store.save(&st)?;
        Ok(id)
    }

    pub fn set_context(&self, id: &SessionId, input: &ContextInput) -> Result<ContextSnapshot, EngineError> {
        let ctx = capture_context(id, input.device, &input.at, input.utc_offset_minutes, &self.settings.capture)?;
        self.with_session(id, |st| {
            st.context = Some(ctx.clone());
            Ok(ctx)
        })
    }

    pub fn ingest_events(&self, id: &SessionId, events: &[RawEvent]) -> Result<IngestAck, EngineError> {
        self.with_session(id, |st| {
            st.signals.ingest(id, events)?;
            let mut auto_run = None;
            if let Some(n) = self.settings.pipeline.auto_run_after_actions.filter(|n| *n > 0) {
                let actions = st.signals.appliance_action_count();
                if actions / n > st.actions_at_last_auto_run / n {
                    st.actions_at_last_auto_run = actions;
                    let outcome = self.run_locked(st, ReasonerKind::RuleBased)?;
                    st.last_outcome = Some(outcome.clone());
                    auto_run = Some(outcome);
                }
            }
            Ok(IngestAck { batches: st.signals.batches(), events: st.signals.event_count(), auto_run })
        })
    }

    /// Appends a detector frame and traces it. A post-nudge frame carries
    /// its delta against the latest pre-nudge frame.
    pub fn record_emotion(&self, id: &SessionId, frame: EmotionDistribution) -> Result<EmotionAck, EngineError> {
        frame.validate().map_err(|e| EngineError::Invalid(e.to_string()))?;
        self.with_session(id, |st| {
            let (stage, delta) = match frame.phase {
                EmotionPhase::PreNudge => (TraceStage::EmotionPre, None),
                EmotionPhase::PostNudge => {
                    if st.delivered.is_empty() {
                        return Err(EngineError::Invalid("post-nudge frame before any delivery in this session".into()));
                    }
                    let pre = st.signals.signals().latest_pre_nudge_frame().cloned();
                    let delta = pre.map(|p| emotion_delta(&p, &frame)).transpose().map_err(|e| EngineError::Invalid(e.to_string()))?;
                    (TraceStage::EmotionPost, delta)
                }
            };
            let seq = self.trace(id, stage, &EmotionTrace { frame: &frame, delta: delta.as_ref() })?;
            st.signals.push_emotion(frame.clone());
            Ok(EmotionAck { seq, phase: frame.phase, delta })
        })
    }

    pub fn run_pipeline(&self, id: &SessionId, kind: ReasonerKind) -> Result<PipelineOutcome, EngineError> {
        self.with_session(id, |st| {
            let outcome = self.run_locked(st, kind)?;
            st.last_outcome = Some(outcome.clone());
            Ok(outcome)
        })
    }

    fn run_locked(&self, st: &mut SessionState, kind: ReasonerKind) -> Result<PipelineOutcome, EngineError> {
        let Some(ctx) = st.context.clone() else {
            return Ok(PipelineOutcome::no_nudge(INSUFFICIENT_DATA));
        };
        if st.signals.batches() == 0 {
            return Ok(PipelineOutcome::no_nudge(INSUFFICIENT_DATA));
        }
        let sid = st.session_id.clone();
        let sig = st.signals.signals();
        self.trace_valid(&sid, TraceStage::RawSignals, &sig)?;
        self.trace_valid(&sid, TraceStage::Context, &ctx)?;

        let profiled = match build_profile(&ctx, &sig, &st.history, kind, &self.settings.modeling, &self.gateway, self.clock.now()) {
            Ok(p) => p,
            Err(e) => {
                tracing::warn!(session = %sid, error = %e, "profiling failed");
                return Ok(PipelineOutcome::no_nudge(PROFILING_FAILED));
            }
        };
        let stages = [TraceStage::CognitiveMode, TraceStage::BehavioralStage, TraceStage::Attention];
        for (stage, c) in stages.into_iter().zip(&profiled.traces) {
            self.trace(&sid, stage, c)?;
        }
        let profile = profiled.profile;

        st.nudge_counter += 1;
        let nudge_id = NudgeId::new(format!("{sid}-{}", st.nudge_counter));
        let ui = adapt_ui(&profile, &self.settings.ui);
        let taxonomy_ids = self.taxonomy.ids();
        let guardrails = self.gateway.guardrails().guardrail_prompts();
        let pipeline = &self.settings.pipeline;
        let mut ui_traced = false;
        let mut excluded = BTreeSet::new();

        for round in 0..=pipeline.strategy_swaps {
            let sel = match select_strategy(&profile, &st.history.feedback, &self.taxonomy, &excluded, kind, &self.gateway) {
                Ok(s) => s,
                Err(SelectionError::NoStrategy) if round > 0 => return Ok(PipelineOutcome::no_nudge(COMPLIANCE_EXHAUSTED)),
                Err(SelectionError::NoStrategy) => return Ok(PipelineOutcome::no_nudge(NO_STRATEGY)),
                Err(e) => {
                    tracing::warn!(session = %sid, error = %e, "strategy selection failed");
                    return Ok(PipelineOutcome::no_nudge(NO_STRATEGY));
                }
            };
            self.trace(&sid, TraceStage::StrategySelection, &sel)?;
            let strategy = self
                .taxonomy
                .get(&sel.strategy_id)
                .ok_or_else(|| EngineError::Invalid(format!("selected unknown strategy {}", sel.strategy_id)))?;
            let explanation = explain(&profile, &sel, kind, &self.gateway);
            let attempts = if round == 0 { pipeline.regeneration_attempts } else { pipeline.attempts_after_swap };
            let mut hint = None;
            for attempt in 0..attempts {
                let req = GenerationRequest {
                    strategy,
                    signals: &sig,
                    profile: &profile,
                    guardrails,
                    kind,
                    attempt,
                    regeneration_hint: hint.clone(),
                };
                let generated = match self.generator.generate(&req, &self.gateway) {
                    Ok(g) => g,
                    Err(GenerationError::NoAppliance) => return Ok(PipelineOutcome::no_nudge(NO_STRATEGY)),
                    Err(e) => {
                        tracing::warn!(session = %sid, error = %e, "generation failed");
                        return Ok(PipelineOutcome::no_nudge(GENERATION_FAILED));
                    }
                };
                self.trace(
                    &sid,
                    TraceStage::NudgeDraft,
                    &DraftTrace {
                        nudge_id: &nudge_id,
                        strategy_id: &strategy.id,
                        attempt,
                        message: &generated.message,
                        reasoner: generated.reasoner,
                        fallback: generated.fallback.as_deref(),
                        explanation: &explanation,
                    },
                )?;
                if !ui_traced {
                    self.trace_valid(&sid, TraceStage::UiAdaptation, &ui)?;
                    ui_traced = true;
                }
                let draft = NudgeDelivery {
                    nudge_id: nudge_id.clone(),
                    strategy_id: strategy.id.clone(),
                    message: generated.message,
                    explanation: explanation.text.clone(),
                    ui: ui.clone(),
                    profile: profile.clone(),
                    delivered_at: self.clock.now(),
                };
                let ctx = ComplianceContext { signals: &sig, taxonomy_ids: &taxonomy_ids };
                let verdict = validate_nudge(&draft, &ctx, &self.rules, self.clock.now());
                self.trace(&sid, TraceStage::ComplianceVerdict, &VerdictTrace { verdict: &verdict, draft: &draft })?;
                if verdict.passed {
                    self.trace(&sid, TraceStage::Delivery, &draft)?;
                    st.delivered.insert(nudge_id.clone(), draft.clone());
                    st.last_delivery = Some(nudge_id);
                    return Ok(PipelineOutcome::delivered(draft));
                }
                hint = Some(regeneration_hint(&verdict));
            }
            excluded.insert(sel.strategy_id);
        }
        Ok(PipelineOutcome::no_nudge(COMPLIANCE_EXHAUSTED))
    }

    pub fn submit_feedback(&self, id: &SessionId, nudge_id: &NudgeId, thumbs: Thumbs) -> Result<FeedbackAck, EngineError> {
        self.with_session(id, |st| {
            let strategy_id = st
                .delivered
                .get(nudge_id)
                .map(|d| d.strategy_id.clone())
                .ok_or_else(|| EngineError::UnknownNudge { session: id.clone(), nudge: nudge_id.clone() })?;
            if let Some(prev) = st.history.feedback.iter().find(|f| &f.record.nudge_id == nudge_id) {
                return Ok(FeedbackAck { record: prev.record.clone(), strategy_id, duplicate: true });
            }
            let entry = FeedbackEntry {
                record: FeedbackRecord { nudge_id: nudge_id.clone(), thumbs, recorded_at: self.clock.now() },
                strategy_id: strategy_id.clone(),
            };
            self.trace(id, TraceStage::Feedback, &entry)?;
            st.history.feedback.push(entry.clone());
            Ok(FeedbackAck { record: entry.record, strategy_id, duplicate: false })
        })
    }

    pub fn ui_context(&self, id: &SessionId) -> Result<Option<UiContext>, EngineError> {
        Ok(self.session(id)?.latest_delivery().map(|d| d.ui.clone()))
    }

    pub fn explanation(&self, id: &SessionId) -> Result<Option<ExplanationView>, EngineError> {
        Ok(self.session(id)?.latest_delivery().map(|d| ExplanationView {
            nudge_id: d.nudge_id.clone(),
            strategy_id: d.strategy_id.clone(),
            explanation: d.explanation.clone(),
        }))
    }

    pub fn session_traces(&self, id: &SessionId) -> Result<Vec<TraceRecord>, EngineError> {
        self.session(id)?;
        Ok(self.traces.session_records(id))
    }

    pub fn fairness(&self, group_by: &str, threshold: Option<f64>) -> Result<FairnessReport, EngineError> {
        let threshold = threshold.unwrap_or(self.settings.fairness.threshold);
        Ok(audit_fairness(&self.traces.records(), group_by, threshold)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capture::EventKind;
    use crate::guardrails::trace::{check_gapless, check_interceptor, check_run_order, verdict_passed};
    use crate::intelligence::generation::Generated;
    use std::sync::atomic::AtomicUsize;

    fn t(s: &str) -> DateTime<Utc> {
        s.parse().unwrap()
    }

    fn engine() -> Engine {
        Engine::from_settings(Settings::default())
            .unwrap()
            .with_clock(Box::new(FixedClock(t("2025-03-03T09:30:00Z"))))
    }

    fn appliance(id: &SessionId, at: &str, name: &str, w: f64, h: f64, action: &str) -> RawEvent {
        RawEvent::new(id, EventKind::ApplianceAction, t(at))
            .with("appliance_id", name)
            .with("wattage_w", w)
            .with("usage_hours", h)
            .with("action", action)
    }

    /// Analytical, contemplation, high attention on a desktop.
    fn session_one(e: &Engine) -> SessionId {
        let id = e.create_session(NewSession::default()).unwrap();
        e.set_context(&id, &ContextInput { device: Device::Desktop, at: "2025-03-03T09:30:00Z".into(), utc_offset_minutes: 0 })
            .unwrap();
        let mut events = vec![RawEvent::new(&id, EventKind::PageFocus, t("2025-03-03T09:30:00Z"))];
        for i in 0..16 {
            events.push(RawEvent::new(&id, EventKind::Click, t(&format!("2025-03-03T09:30:{:02}Z", 4 + i))));
        }
        events.push(appliance(&id, "2025-03-03T09:31:00Z", "heater", 2000.0, 3.0, "add"));
        events.push(appliance(&id, "2025-03-03T09:31:05Z", "heater", 2000.0, 3.0, "view"));
        events.push(appliance(&id, "2025-03-03T09:31:10Z", "lamp", 60.0, 5.0, "add"));
        e.ingest_events(&id, &events).unwrap();
        id
    }

    #[test]
    fn session_one_delivers_just_in_time_at_16px() {
        let e = engine();
        let id = session_one(&e);
        let out = e.run_pipeline(&id, ReasonerKind::RuleBased).unwrap();
        let d = out.delivery.expect("delivered");
        assert_eq!(d.strategy_id, "just_in_time");
        assert_eq!(d.ui.font_size_px, 16);
        assert_eq!(d.profile.dimensions(), (CognitiveMode::Analytical, BehavioralStage::Contemplation, AttentionLevel::High));
        for needle in ["analytical", "contemplation", "just_in_time"] {
            assert!(d.explanation.contains(needle));
        }
        let recs = e.traces().records();
        let stages: Vec<TraceStage> = recs.iter().map(|r| r.stage).collect();
        assert_eq!(
            stages,
            vec![
                TraceStage::RawSignals,
                TraceStage::Context,
                TraceStage::CognitiveMode,
                TraceStage::BehavioralStage,
                TraceStage::Attention,
                TraceStage::StrategySelection,
                TraceStage::NudgeDraft,
                TraceStage::UiAdaptation,
                TraceStage::ComplianceVerdict,
                TraceStage::Delivery,
            ]
        );
        check_gapless(&recs).unwrap();
        check_interceptor(&recs).unwrap();
        check_run_order(&recs).unwrap();
    }

    #[test]
    fn missing_inputs_give_insufficient_data() {
        let e = engine();
        let id = e.create_session(NewSession::default()).unwrap();
        assert_eq!(e.run_pipeline(&id, ReasonerKind::RuleBased).unwrap(), PipelineOutcome::no_nudge(INSUFFICIENT_DATA));
        e.set_context(&id, &ContextInput { device: Device::Mobile, at: "2025-03-03T12:00:00Z".into(), utc_offset_minutes: 0 })
            .unwrap();
        assert_eq!(e.run_pipeline(&id, ReasonerKind::RuleBased).unwrap().reason.as_deref(), Some(INSUFFICIENT_DATA));
        assert!(e.traces().records().is_empty());
    }

    struct Poisoned(AtomicUsize);

    impl NudgeGenerator for Poisoned {
        fn generate(&self, _: &GenerationRequest<'_>, _: &Gateway) -> Result<Generated, GenerationError> {
            self.0.fetch_add(1, Ordering::SeqCst);
            Ok(Generated { message: "Last chance to save!".into(), reasoner: ReasonerKind::RuleBased, fallback: None })
        }
    }

    #[test]
    fn poisoned_generator_exhausts_the_budget() {
        let poisoned = Arc::new(Poisoned(AtomicUsize::new(0)));
        let e = engine().with_generator(poisoned.clone());
        let id = session_one(&e);
        let out = e.run_pipeline(&id, ReasonerKind::RuleBased).unwrap();
        assert_eq!(out, PipelineOutcome::no_nudge(COMPLIANCE_EXHAUSTED));
        assert_eq!(poisoned.0.load(Ordering::SeqCst), 4);
        let recs = e.traces().records();
        let failed = recs.iter().filter(|r| verdict_passed(r) == Some(false)).count();
        let selections = recs.iter().filter(|r| r.stage == TraceStage::StrategySelection).count();
        assert_eq!((failed, selections), (4, 2));
        assert!(recs.iter().all(|r| r.stage != TraceStage::Delivery));
        check_run_order(&recs).unwrap();
        check_gapless(&recs).unwrap();
    }

    #[test]
    fn thumbs_down_changes_the_next_strategy_and_feedback_is_idempotent() {
        let e = engine();
        let id = session_one(&e);
        let first = e.run_pipeline(&id, ReasonerKind::RuleBased).unwrap().delivery.unwrap();
        let ack = e.submit_feedback(&id, &first.nudge_id, Thumbs::Down).unwrap();
        assert!(!ack.duplicate);
        let again = e.submit_feedback(&id, &first.nudge_id, Thumbs::Up).unwrap();
        assert!(again.duplicate);
        assert_eq!(again.record.thumbs, Thumbs::Down);
        assert_eq!(e.session(&id).unwrap().history.feedback.len(), 1);
        let second = e.run_pipeline(&id, ReasonerKind::RuleBased).unwrap().delivery.unwrap();
        assert_ne!(second.strategy_id, first.strategy_id);
        assert_ne!(second.nudge_id, first.nudge_id);

        let other = session_one(&e);
        assert!(matches!(
            e.submit_feedback(&other, &first.nudge_id, Thumbs::Down),
            Err(EngineError::UnknownNudge { .. })
        ));
        check_run_order(&e.traces().records()).unwrap();
    }

    #[test]
    fn emotion_frames_are_traced_with_delta() {
        let e = engine();
        let id = session_one(&e);
        let frame = |h: f64, phase| {
            EmotionDistribution::new(EmotionFields::neutral_dominant(h, t("2025-03-03T09:30:00Z"), phase)).unwrap()
        };
        e.record_emotion(&id, frame(0.000170, EmotionPhase::PreNudge)).unwrap();
        assert!(e.record_emotion(&id, frame(0.000500, EmotionPhase::PostNudge)).is_err());
        e.run_pipeline(&id, ReasonerKind::RuleBased).unwrap();
        let ack = e.record_emotion(&id, frame(0.000500, EmotionPhase::PostNudge)).unwrap();
        assert_eq!(ack.delta.unwrap().formatted()["happiness"], "0.000330");
    }

    #[test]
    fn session_ids_are_checked() {
        let e = engine();
        let bad = NewSession { session_id: Some(SessionId::new("../x")), ..Default::default() };
        assert!(matches!(e.create_session(bad), Err(EngineError::BadSessionId(_))));
        let ok = NewSession { session_id: Some(SessionId::new("p-01")), ..Default::default() };
        e.create_session(ok.clone()).unwrap();
        assert!(matches!(e.create_session(ok), Err(EngineError::SessionExists(_))));
    }
}
