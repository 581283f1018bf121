//! Drives simulated sessions through an engine, in process or over HTTP,
//! and summarizes what came back.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Duration as StdDuration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::capture::RawEvent;
use crate::domain::{EmotionDistribution, ReasonerKind, SessionId};
use crate::orchestrator::engine::{ContextInput, EmotionAck, FixedClock, NewSession, OutcomeKind};
use crate::orchestrator::{Engine, EngineError, PipelineOutcome};
use crate::sim::persona::{base_day, SimulatedSession};

/// The calls a replay makes, whichever side of the wire the engine is on.
pub trait SessionDriver {
    fn create_session(&self, req: &NewSession) -> Result<SessionId, String>;
    fn set_context(&self, id: &SessionId, ctx: &ContextInput) -> Result<(), String>;
    fn ingest(&self, id: &SessionId, events: &[RawEvent]) -> Result<(), String>;
    fn emotion(&self, id: &SessionId, frame: &EmotionDistribution) -> Result<EmotionAck, String>;
    fn run(&self, id: &SessionId, kind: ReasonerKind) -> Result<PipelineOutcome, String>;
}

pub struct InProcessDriver {
    engine: Arc<Engine>,
}

impl InProcessDriver {
    pub fn new(engine: Arc<Engine>) -> Self {
        Self { engine }
    }

    /// Engine from `settings` with its clock pinned to the simulated day,
    /// so repeated replays produce identical traces.
    pub fn deterministic(settings: crate::config::Settings) -> Result<Self, EngineError> {
        let engine = Engine::from_settings(settings)?.with_clock(Box::new(FixedClock(base_day())));
        Ok(Self::new(Arc::new(engine)))
    }

    pub fn engine(&self) -> &Arc<Engine> {
        &self.engine
    }
}

fn msg(e: EngineError) -> String {
    e.to_string()
}

impl SessionDriver for InProcessDriver {
    fn create_session(&self, req: &NewSession) -> Result<SessionId, String> {
        self.engine.create_session(req.clone()).map_err(msg)
    }

    fn set_context(&self, id: &SessionId, ctx: &ContextInput) -> Result<(), String> {
        self.engine.set_context(id, ctx).map(|_| ()).map_err(msg)
    }

    fn ingest(&self, id: &SessionId, events: &[RawEvent]) -> Result<(), String> {
        self.engine.ingest_events(id, events).map(|_| ()).map_err(msg)
    }

    fn emotion(&self, id: &SessionId, frame: &EmotionDistribution) -> Result<EmotionAck, String> {
        self.engine.record_emotion(id, frame.clone()).map_err(msg)
    }

    fn run(&self, id: &SessionId, kind: ReasonerKind) -> Result<PipelineOutcome, String> {
        self.engine.run_pipeline(id, kind).map_err(msg)
    }
}

/// Talks to `nudge serve` or any server exposing the same routes.
pub struct HttpDriver {
    base: String,
    client: reqwest::blocking::Client,
}

impl HttpDriver {
    pub fn new(base_url: &str) -> Result<Self, String> {
        let client = reqwest::blocking::Client::builder()
            .timeout(StdDuration::from_secs(30))
            .build()
            .map_err(|e| e.to_string())?;
        Ok(Self { base: base_url.trim_end_matches('/').to_string(), client })
    }

    fn post<B: Serialize + ?Sized, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, String> {
        let url = format!("{}{path}", self.base);
        let resp = self.client.post(&url).json(body).send().map_err(|e| format!("POST {url}: {e}"))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| format!("POST {url}: {e}"))?;
        if !status.is_success() {
            return Err(format!("POST {url}: {status}: {text}"));
        }
        serde_json::from_str(&text).map_err(|e| format!("POST {url}: unreadable response: {e}"))
    }
}

#[derive(Deserialize)]
struct Created {
    session_id: SessionId,
}

#[derive(Serialize)]
struct Events<'a> {
    events: &'a [RawEvent],
}

impl SessionDriver for HttpDriver {
    fn create_session(&self, req: &NewSession) -> Result<SessionId, String> {
        self.post::<_, Created>("/sessions", req).map(|c| c.session_id)
    }

    fn set_context(&self, id: &SessionId, ctx: &ContextInput) -> Result<(), String> {
        self.post::<_, serde_json::Value>(&format!("/sessions/{id}/context"), ctx).map(|_| ())
    }

    fn ingest(&self, id: &SessionId, events: &[RawEvent]) -> Result<(), String> {
        self.post::<_, serde_json::Value>(&format!("/sessions/{id}/events"), &Events { events }).map(|_| ())
    }

    fn emotion(&self, id: &SessionId, frame: &EmotionDistribution) -> Result<EmotionAck, String> {
        self.post(&format!("/sessions/{id}/emotion"), frame)
    }

    fn run(&self, id: &SessionId, kind: ReasonerKind) -> Result<PipelineOutcome, String> {
        self.post(&format!("/sessions/{id}/run?reasoner={kind}"), &serde_json::Value::Null)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionResult {
    pub session_id: SessionId,
    pub persona: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_strategy: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<OutcomeKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub font_size_px: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub happiness_delta: Option<f64>,
    /// Set when a driver call failed and the session did not complete.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl SessionResult {
    pub fn completed(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub sessions: usize,
    pub completed: usize,
    pub completion_rate: f64,
    pub delivered: usize,
    /// No-nudge outcomes by reason.
    pub no_nudge: BTreeMap<String, usize>,
    pub strategies: BTreeMap<String, usize>,
    /// Delivered font sizes, keyed by pixel size.
    pub fonts: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_happiness_delta: Option<f64>,
    /// Sessions with an expected strategy, and how many got it.
    pub expected: usize,
    pub expected_matched: usize,
    pub results: Vec<SessionResult>,
}

fn replay_one(driver: &dyn SessionDriver, s: &SimulatedSession, kind: ReasonerKind) -> SessionResult {
    let mut r = SessionResult {
        session_id: s.session_id.clone(),
        persona: s.persona.clone(),
        expected_strategy: s.expected_strategy.clone(),
        outcome: None,
        strategy_id: None,
        font_size_px: None,
        reason: None,
        happiness_delta: None,
        error: None,
    };
    let mut steps = || -> Result<(), String> {
        let id = driver.create_session(&s.new_session)?;
        r.session_id = id.clone();
        driver.set_context(&id, &s.context)?;
        driver.emotion(&id, &s.pre_frame)?;
        driver.ingest(&id, &s.events)?;
        let outcome = driver.run(&id, kind)?;
        r.outcome = Some(outcome.kind);
        r.reason = outcome.reason.clone();
        if let Some(d) = &outcome.delivery {
            r.strategy_id = Some(d.strategy_id.clone());
            r.font_size_px = Some(d.ui.font_size_px);
            let ack = driver.emotion(&id, &s.post_frame)?;
            r.happiness_delta = ack.delta.map(|d| d.happiness);
        }
        Ok(())
    };
    let result = steps();
    if let Err(e) = result {
        r.error = Some(e);
    }
    r
}

pub fn replay(driver: &dyn SessionDriver, sessions: &[SimulatedSession], kind: ReasonerKind) -> ReplayReport {
    let results: Vec<SessionResult> = sessions.iter().map(|s| replay_one(driver, s, kind)).collect();
    summarize(results)
}

pub fn summarize(results: Vec<SessionResult>) -> ReplayReport {
    let mut no_nudge = BTreeMap::new();
    let mut strategies = BTreeMap::new();
    let mut fonts = BTreeMap::new();
    let mut deltas = Vec::new();
    let (mut delivered, mut expected, mut expected_matched) = (0, 0, 0);
    for r in &results {
        match r.outcome {
            Some(OutcomeKind::Delivered) => delivered += 1,
            Some(OutcomeKind::NoNudge) => {
                *no_nudge.entry(r.reason.clone().unwrap_or_default()).or_insert(0) += 1;
            }
            None => {}
        }
        if let Some(id) = &r.strategy_id {
            *strategies.entry(id.clone()).or_insert(0) += 1;
        }
        if let Some(px) = r.font_size_px {
            *fonts.entry(px.to_string()).or_insert(0) += 1;
        }
        if let Some(d) = r.happiness_delta {
            deltas.push(d);
        }
        if let Some(want) = &r.expected_strategy {
            expected += 1;
            if r.strategy_id.as_ref() == Some(want) {
                expected_matched += 1;
            }
        }
    }
    let completed = results.iter().filter(|r| r.completed()).count();
    let sessions = results.len();
    ReplayReport {
        sessions,
        completed,
        completion_rate: if sessions == 0 { 1.0 } else { completed as f64 / sessions as f64 },
        delivered,
        no_nudge,
        strategies,
        fonts,
        mean_happiness_delta: (!deltas.is_empty()).then(|| deltas.iter().sum::<f64>() / deltas.len() as f64),
        expected,
        expected_matched,
        results,
    }
}

impl ReplayReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "sessions {}  completed {} ({:.1}%)  delivered {}",
            self.sessions,
            self.completed,
            self.completion_rate * 100.0,
            self.delivered
        );
        for (reason, n) in &self.no_nudge {
            let _ = writeln!(out, "no nudge: {reason} x{n}");
        }
        for (id, n) in &self.strategies {
            let _ = writeln!(out, "strategy {id:<20} {n}/{}", self.sessions);
        }
        for (px, n) in &self.fonts {
            let _ = writeln!(out, "font {px}px {n}/{}", self.sessions);
        }
        if let Some(d) = self.mean_happiness_delta {
            let _ = writeln!(out, "mean happiness delta {d:.6}");
        }
        if self.expected > 0 {
            let _ = writeln!(out, "expected strategy matched {}/{}", self.expected_matched, self.expected);
        }
        for r in &self.results {
            let got = match (&r.strategy_id, &r.reason, &r.error) {
                (_, _, Some(e)) => format!("ERROR {e}"),
                (Some(id), _, _) => format!("{id} {}px", r.font_size_px.unwrap_or(0)),
                (None, Some(reason), _) => format!("no nudge ({reason})"),
                _ => "-".into(),
            };
            let _ = writeln!(out, "  {:<36} {got}", r.session_id.as_str());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Settings;
    use crate::sim::persona::{reference_personas, simulate_session};

    fn reference_sessions() -> Vec<SimulatedSession> {
        let s = Settings::default();
        reference_personas().iter().map(|p| simulate_session(p, p.seed, &s).unwrap()).collect()
    }

    #[test]
    fn reference_replay_matches_expectations() {
        let driver = InProcessDriver::deterministic(Settings::default()).unwrap();
        let report = replay(&driver, &reference_sessions(), ReasonerKind::RuleBased);
        assert_eq!(report.completed, 15, "{}", report.to_text());
        assert_eq!(report.expected_matched, 15, "{}", report.to_text());
        assert_eq!(report.strategies.get("just_in_time"), Some(&8));
        assert_eq!(report.fonts.get("16"), Some(&11));
        let d = report.mean_happiness_delta.unwrap();
        assert!((d - 0.000330).abs() < 1e-9, "{d}");
    }

    #[test]
    fn a_failing_driver_lowers_completion() {
        struct Broken;
        impl SessionDriver for Broken {
            fn create_session(&self, _: &NewSession) -> Result<SessionId, String> {
                Err("down".into())
            }
            fn set_context(&self, _: &SessionId, _: &ContextInput) -> Result<(), String> {
                unreachable!()
            }
            fn ingest(&self, _: &SessionId, _: &[RawEvent]) -> Result<(), String> {
                unreachable!()
            }
            fn emotion(&self, _: &SessionId, _: &EmotionDistribution) -> Result<EmotionAck, String> {
                unreachable!()
            }
            fn run(&self, _: &SessionId, _: ReasonerKind) -> Result<PipelineOutcome, String> {
                unreachable!()
            }
        }
        let report = replay(&Broken, &reference_sessions()[..2], ReasonerKind::RuleBased);
        assert_eq!(report.completed, 0);
        assert_eq!(report.completion_rate, 0.0);
        assert!(report.to_text().contains("ERROR down"));
    }
}
