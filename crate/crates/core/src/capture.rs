//! Context tracking and behavioral signal collection.
//!
//! Raw UI events are folded into [`BehavioralSignals`]. Folding is batch
//! atomic: a batch either validates completely and is applied, or is
//! rejected with the index of the first offending event and leaves the
//! accumulator untouched.

use std::collections::BTreeMap;

use chrono::{DateTime, FixedOffset, Timelike, Utc};
use serde::{Deserialize, Serialize};

use crate::config::CaptureSettings;
use crate::domain::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Click,
    Hover,
    ApplianceAction,
    EmotionFrame,
    PageFocus,
    PageBlur,
}

/// Flat attribute value carried by a [`RawEvent`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Bool(bool),
    Number(f64),
    Text(String),
}

impl From<f64> for Scalar {
    fn from(v: f64) -> Self {
        Scalar::Number(v)
    }
}

impl From<&str> for Scalar {
    fn from(v: &str) -> Self {
        Scalar::Text(v.to_string())
    }
}

impl From<bool> for Scalar {
    fn from(v: bool) -> Self {
        Scalar::Bool(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawEvent {
    pub session_id: SessionId,
    pub kind: EventKind,
    pub at: DateTime<Utc>,
    #[serde(default)]
    pub attributes: BTreeMap<String, Scalar>,
}

impl RawEvent {
    pub fn new(session_id: &SessionId, kind: EventKind, at: DateTime<Utc>) -> Self {
        Self { session_id: session_id.clone(), kind, at, attributes: BTreeMap::new() }
    }

    pub fn with(mut self, key: &str, value: impl Into<Scalar>) -> Self {
        self.attributes.insert(key.to_string(), value.into());
        self
    }

    fn text(&self, key: &str) -> Option<&str> {
        match self.attributes.get(key)? {
            Scalar::Text(s) => Some(s),
            _ => None,
        }
    }

    fn number(&self, key: &str) -> Option<f64> {
        match self.attributes.get(key)? {
            Scalar::Number(v) => Some(*v),
            Scalar::Text(s) => s.trim().parse().ok(),
            Scalar::Bool(_) => None,
        }
    }

    fn flag(&self, key: &str) -> Option<bool> {
        match self.attributes.get(key)? {
            Scalar::Bool(b) => Some(*b),
            Scalar::Text(s) => s.trim().parse().ok(),
            Scalar::Number(_) => None,
        }
    }

    fn is_action(&self) -> bool {
        matches!(self.kind, EventKind::Click | EventKind::ApplianceAction)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CaptureError {
    #[error("unparseable timestamp {input:?}")]
    BadTimestamp { input: String },
    #[error("event {index} rejected: {reason}")]
    BadEvent { index: usize, reason: String },
    #[error("emotion frame rejected: {0}")]
    BadEmotion(String),
}

fn bad(index: usize, reason: impl Into<String>) -> CaptureError {
    CaptureError::BadEvent { index, reason: reason.into() }
}

pub fn parse_timestamp(input: &str) -> Result<DateTime<Utc>, CaptureError> {
    DateTime::parse_from_rfc3339(input.trim())
        .map(|t| t.with_timezone(&Utc))
        .map_err(|_| CaptureError::BadTimestamp { input: input.to_string() })
}

/// Daypart for a local hour: `[morning, afternoon)` Morning,
/// `[afternoon, evening)` Afternoon, everything else Evening.
pub fn bucket_hour(hour: u32, buckets: &CaptureSettings) -> TimeOfDay {
    if (buckets.morning_start_hour..buckets.afternoon_start_hour).contains(&hour) {
        TimeOfDay::Morning
    } else if (buckets.afternoon_start_hour..buckets.evening_start_hour).contains(&hour) {
        TimeOfDay::Afternoon
    } else {
        TimeOfDay::Evening
    }
}

pub fn time_of_day(at: DateTime<Utc>, utc_offset_minutes: i32, buckets: &CaptureSettings) -> TimeOfDay {
    let offset = FixedOffset::east_opt(utc_offset_minutes * 60).unwrap_or(FixedOffset::east_opt(0).unwrap());
    bucket_hour(at.with_timezone(&offset).hour(), buckets)
}

/// Builds a context snapshot from a caller-supplied RFC 3339 timestamp.
pub fn capture_context(
    session_id: &SessionId,
    device: Device,
    at: &str,
    utc_offset_minutes: i32,
    buckets: &CaptureSettings,
) -> Result<ContextSnapshot, CaptureError> {
    let captured_at = parse_timestamp(at)?;
    if utc_offset_minutes.abs() >= 24 * 60 {
        return Err(CaptureError::BadTimestamp { input: format!("{at} (offset {utc_offset_minutes} min)") });
    }
    Ok(ContextSnapshot {
        session_id: session_id.clone(),
        device,
        time_of_day: time_of_day(captured_at, utc_offset_minutes, buckets),
        captured_at,
        utc_offset_minutes,
    })
}

/// Running per-session aggregate. Cloneable so a batch can be applied to a
/// copy and committed only on success.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SignalAccumulator {
    click_count: u64,
    hesitation_total_ms: f64,
    hesitation_pairs: u64,
    pending_focus: Option<DateTime<Utc>>,
    interactions: Vec<ApplianceInteraction>,
    hours: BTreeMap<String, f64>,
    emotion_frames: Vec<EmotionDistribution>,
    batches: u64,
    events: u64,
}

impl SignalAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of accepted, non-empty-or-empty batches.
    pub fn batches(&self) -> u64 {
        self.batches
    }

    pub fn event_count(&self) -> u64 {
        self.events
    }

    pub fn appliance_action_count(&self) -> u64 {
        self.interactions.len() as u64
    }

    /// Validates the whole batch first, then applies it.
    pub fn ingest(&mut self, session_id: &SessionId, events: &[RawEvent]) -> Result<(), CaptureError> {
        let mut next = self.clone();
        let mut last_at: Option<DateTime<Utc>> = None;
        for (index, ev) in events.iter().enumerate() {
            if &ev.session_id != session_id {
                return Err(bad(index, format!("belongs to session {}", ev.session_id)));
            }
            if last_at.is_some_and(|prev| ev.at < prev) {
                return Err(bad(index, "timestamp goes backwards within the batch"));
            }
            last_at = Some(ev.at);
            next.apply(index, ev)?;
        }
        next.batches += 1;
        next.events += events.len() as u64;
        *self = next;
        Ok(())
    }

    fn apply(&mut self, index: usize, ev: &RawEvent) -> Result<(), CaptureError> {
        if ev.is_action() {
            if let Some(focus) = self.pending_focus.take() {
                self.hesitation_total_ms += (ev.at - focus).num_milliseconds().max(0) as f64;
                self.hesitation_pairs += 1;
            }
        }
        match ev.kind {
            EventKind::Click => self.click_count += 1,
            EventKind::PageFocus => self.pending_focus = Some(ev.at),
            EventKind::Hover | EventKind::PageBlur => {}
            EventKind::ApplianceAction => {
                let it = self.interaction(index, ev)?;
                if it.applied && it.action != ApplianceAction::Remove {
                    self.hours.insert(it.appliance_id.clone(), it.usage_hours);
                } else if it.action == ApplianceAction::Remove {
                    self.hours.remove(&it.appliance_id);
                }
                self.interactions.push(it);
            }
            EventKind::EmotionFrame => {
                let frame = emotion_from_event(ev).map_err(|e| bad(index, e))?;
                self.emotion_frames.push(frame);
            }
        }
        Ok(())
    }

    fn interaction(&self, index: usize, ev: &RawEvent) -> Result<ApplianceInteraction, CaptureError> {
        let appliance_id = ev
            .text("appliance_id")
            .filter(|s| !s.is_empty())
            .ok_or_else(|| bad(index, "missing attribute appliance_id"))?
            .to_string();
        let wattage_w = ev.number("wattage_w").ok_or_else(|| bad(index, "missing attribute wattage_w"))?;
        let action: ApplianceAction = ev
            .text("action")
            .ok_or_else(|| bad(index, "missing attribute action"))?
            .parse()
            .map_err(|e: UnknownLabel| bad(index, e.to_string()))?;
        let known = self.hours.get(&appliance_id).copied();
        let usage_hours = match ev.number("usage_hours") {
            Some(h) => h,
            None => known.unwrap_or(0.0),
        };
        if !(wattage_w.is_finite() && wattage_w >= 0.0) {
            return Err(bad(index, "wattage_w must be non-negative"));
        }
        if !(usage_hours.is_finite() && usage_hours >= 0.0) {
            return Err(bad(index, "usage_hours must be non-negative"));
        }
        let previous_hours = ev.number("previous_hours").or(known);
        Ok(ApplianceInteraction {
            appliance_id,
            wattage_w,
            usage_hours,
            action,
            applied: ev.flag("applied").unwrap_or(true),
            previous_hours,
        })
    }

    /// Appends an already-validated detector frame.
    pub fn push_emotion(&mut self, frame: EmotionDistribution) {
        self.emotion_frames.push(frame);
    }

    pub fn signals(&self) -> BehavioralSignals {
        let mut sig = BehavioralSignals {
            click_count: self.click_count,
            mean_hesitation_ms: if self.hesitation_pairs == 0 {
                0.0
            } else {
                self.hesitation_total_ms / self.hesitation_pairs as f64
            },
            appliance_interactions: self.interactions.clone(),
            total_consumption_kwh: 0.0,
            emotion_frames: self.emotion_frames.clone(),
        };
        sig.total_consumption_kwh = sig.recompute_consumption();
        sig
    }
}

fn emotion_from_event(ev: &RawEvent) -> Result<EmotionDistribution, String> {
    let get = |k: &str| ev.number(k).unwrap_or(0.0);
    let phase: EmotionPhase = ev
        .text("phase")
        .ok_or("missing attribute phase")?
        .parse()
        .map_err(|e: UnknownLabel| e.to_string())?;
    EmotionDistribution::new(EmotionFields {
        happiness: get("happiness"),
        sadness: get("sadness"),
        anger: get("anger"),
        fear: get("fear"),
        disgust: get("disgust"),
        surprise: get("surprise"),
        neutral: get("neutral"),
        frame_at: ev.at,
        phase,
    })
    .map_err(|e| e.to_string())
}

/// Folds one batch of events for a fresh session.
pub fn ingest_signals(session_id: &SessionId, events: &[RawEvent]) -> Result<BehavioralSignals, CaptureError> {
    let mut acc = SignalAccumulator::new();
    acc.ingest(session_id, events)?;
    Ok(acc.signals())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sid() -> SessionId {
        SessionId::new("s1")
    }

    fn at(s: &str) -> DateTime<Utc> {
        s.parse().unwrap()
    }

    fn buckets() -> CaptureSettings {
        crate::config::Settings::default().capture
    }

    fn appliance(t: &str, id: &str, w: f64, h: f64, action: &str) -> RawEvent {
        RawEvent::new(&sid(), EventKind::ApplianceAction, at(t))
            .with("appliance_id", id)
            .with("wattage_w", w)
            .with("usage_hours", h)
            .with("action", action)
    }

    #[test]
    fn daypart_buckets() {
        let b = buckets();
        let tod = |t: &str| capture_context(&sid(), Device::Desktop, t, 0, &b).unwrap().time_of_day;
        assert_eq!(tod("2025-03-03T09:30:00Z"), TimeOfDay::Morning);
        assert_eq!(tod("2025-03-03T12:00:00Z"), TimeOfDay::Afternoon);
        assert_eq!(tod("2025-03-03T23:59:00Z"), TimeOfDay::Evening);
        assert_eq!(tod("2025-03-03T04:59:59Z"), TimeOfDay::Evening);
        assert_eq!(tod("2025-03-03T05:00:00Z"), TimeOfDay::Morning);
        assert_eq!(tod("2025-03-03T18:00:00Z"), TimeOfDay::Evening);
    }

    #[test]
    fn local_offset_shifts_bucket() {
        let ctx = capture_context(&sid(), Device::Mobile, "2025-03-03T10:00:00Z", 9 * 60, &buckets()).unwrap();
        assert_eq!(ctx.time_of_day, TimeOfDay::Evening);
    }

    #[test]
    fn bad_timestamp_is_echoed() {
        let err = capture_context(&sid(), Device::Desktop, "yesterday-ish", 0, &buckets()).unwrap_err();
        assert_eq!(err, CaptureError::BadTimestamp { input: "yesterday-ish".into() });
    }

    #[test]
    fn two_appliances_consumption() {
        let events = vec![
            appliance("2025-03-03T09:00:00Z", "heater", 2000.0, 3.0, "add"),
            appliance("2025-03-03T09:00:05Z", "lamp", 60.0, 5.0, "add"),
        ];
        let sig = ingest_signals(&sid(), &events).unwrap();
        // 2000*3/1000 + 60*5/1000
        assert!((sig.total_consumption_kwh - 6.3).abs() < 1e-9);
        assert_eq!(sig.appliance_interactions.len(), 2);
    }

    #[test]
    fn empty_batch_gives_zero_aggregates() {
        let sig = ingest_signals(&sid(), &[]).unwrap();
        assert_eq!(sig, BehavioralSignals::default());
    }

    #[test]
    fn clicks_without_focus_have_no_hesitation() {
        let events: Vec<_> = (0..15)
            .map(|i| RawEvent::new(&sid(), EventKind::Click, at("2025-03-03T09:00:00Z") + chrono::Duration::seconds(i)))
            .collect();
        let sig = ingest_signals(&sid(), &events).unwrap();
        assert_eq!(sig.click_count, 15);
        assert_eq!(sig.mean_hesitation_ms, 0.0);
    }

    #[test]
    fn hesitation_is_focus_to_first_action() {
        let events = vec![
            RawEvent::new(&sid(), EventKind::PageFocus, at("2025-03-03T09:00:00Z")),
            RawEvent::new(&sid(), EventKind::Hover, at("2025-03-03T09:00:01Z")),
            RawEvent::new(&sid(), EventKind::Click, at("2025-03-03T09:00:02Z")),
            RawEvent::new(&sid(), EventKind::Click, at("2025-03-03T09:00:03Z")),
            RawEvent::new(&sid(), EventKind::PageFocus, at("2025-03-03T09:00:10Z")),
            appliance("2025-03-03T09:00:14Z", "heater", 2000.0, 3.0, "view"),
        ];
        let sig = ingest_signals(&sid(), &events).unwrap();
        assert_eq!(sig.mean_hesitation_ms, 3000.0);
        assert_eq!(sig.click_count, 2);
    }

    #[test]
    fn missing_attribute_rejects_whole_batch() {
        let mut acc = SignalAccumulator::new();
        acc.ingest(&sid(), &[appliance("2025-03-03T09:00:00Z", "heater", 2000.0, 3.0, "add")])
            .unwrap();
        let before = acc.clone();
        let broken = RawEvent::new(&sid(), EventKind::ApplianceAction, at("2025-03-03T09:01:00Z"))
            .with("appliance_id", "lamp")
            .with("action", "add");
        let batch = vec![
            RawEvent::new(&sid(), EventKind::Click, at("2025-03-03T09:00:30Z")),
            broken,
        ];
        let err = acc.ingest(&sid(), &batch).unwrap_err();
        assert!(matches!(err, CaptureError::BadEvent { index: 1, .. }), "{err:?}");
        assert_eq!(acc, before);
    }

    #[test]
    fn out_of_order_and_foreign_events_are_rejected() {
        let batch = vec![
            RawEvent::new(&sid(), EventKind::Click, at("2025-03-03T09:00:30Z")),
            RawEvent::new(&sid(), EventKind::Click, at("2025-03-03T09:00:10Z")),
        ];
        assert!(matches!(ingest_signals(&sid(), &batch), Err(CaptureError::BadEvent { index: 1, .. })));
        let foreign = vec![RawEvent::new(&SessionId::new("other"), EventKind::Click, at("2025-03-03T09:00:30Z"))];
        assert!(matches!(ingest_signals(&sid(), &foreign), Err(CaptureError::BadEvent { index: 0, .. })));
    }

    #[test]
    fn adjust_hours_records_previous_value() {
        let events = vec![
            appliance("2025-03-03T09:00:00Z", "heater", 2000.0, 3.0, "add"),
            appliance("2025-03-03T09:00:10Z", "heater", 2000.0, 1.0, "adjust_hours").with("applied", false),
        ];
        let sig = ingest_signals(&sid(), &events).unwrap();
        let it = &sig.appliance_interactions[1];
        assert_eq!(it.previous_hours, Some(3.0));
        assert!(it.is_planned_reduction());
        assert!((sig.total_consumption_kwh - 6.0).abs() < 1e-9);
    }

    #[test]
    fn emotion_frame_events_are_validated() {
        let ok = RawEvent::new(&sid(), EventKind::EmotionFrame, at("2025-03-03T09:00:00Z"))
            .with("happiness", 0.00017)
            .with("neutral", 0.99983)
            .with("phase", "pre_nudge");
        let sig = ingest_signals(&sid(), &[ok]).unwrap();
        assert_eq!(sig.emotion_frames.len(), 1);
        let too_much = RawEvent::new(&sid(), EventKind::EmotionFrame, at("2025-03-03T09:00:00Z"))
            .with("happiness", 0.5)
            .with("neutral", 1.0)
            .with("phase", "pre_nudge");
        assert!(ingest_signals(&sid(), &[too_much]).is_err());
    }

    fn click_batch(start: i64, n: usize) -> Vec<RawEvent> {
        (0..n)
            .map(|i| RawEvent::new(&sid(), EventKind::Click, at("2025-03-03T09:00:00Z") + chrono::Duration::seconds(start + i as i64)))
            .collect()
    }

    proptest! {
        #[test]
        fn every_hour_has_exactly_one_bucket(secs in 0i64..86_400 * 3, offset in -720i32..=840) {
            let t = at("2025-03-03T00:00:00Z") + chrono::Duration::seconds(secs);
            let b = buckets();
            let tod = time_of_day(t, offset, &b);
            let hits = [TimeOfDay::Morning, TimeOfDay::Afternoon, TimeOfDay::Evening]
                .iter()
                .filter(|&&x| x == tod)
                .count();
            prop_assert_eq!(hits, 1);
        }

        #[test]
        fn clicks_and_consumption_are_additive(
            na in 0usize..20,
            nb in 0usize..20,
            wa in proptest::collection::vec((1.0f64..3000.0, 0.0f64..24.0), 0..4),
            wb in proptest::collection::vec((1.0f64..3000.0, 0.0f64..24.0), 0..4),
        ) {
            let mut a = click_batch(0, na);
            for (i, (w, h)) in wa.iter().enumerate() {
                a.push(appliance("2025-03-03T10:00:00Z", &format!("a{i}"), *w, *h, "add"));
            }
            let mut b = click_batch(7200, nb);
            for (i, (w, h)) in wb.iter().enumerate() {
                b.push(appliance("2025-03-03T12:00:00Z", &format!("b{i}"), *w, *h, "add"));
            }
            let sa = ingest_signals(&sid(), &a).unwrap();
            let sb = ingest_signals(&sid(), &b).unwrap();
            let mut all = a.clone();
            all.extend(b.clone());
            let sab = ingest_signals(&sid(), &all).unwrap();
            prop_assert_eq!(sab.click_count, sa.click_count + sb.click_count);
            prop_assert!((sab.total_consumption_kwh - (sa.total_consumption_kwh + sb.total_consumption_kwh)).abs() < 1e-6);
        }
    }
}
