//! Offline fairness audit over the trace log.
//!
//! Each session's records are replayed in seq order. The group a verdict or
//! delivery belongs to is the latest value of the grouping attribute seen
//! earlier in that session: `device` and `time_of_day` come from Context
//! payloads, the profile dimensions from the classification stages.

use std::collections::{BTreeMap, HashMap};

use crate::domain::{FairnessReport, GroupStats, SessionId, TraceRecord, TraceStage};
use crate::guardrails::trace::{payload_field, verdict_passed};

pub const GROUPING_KEYS: [&str; 5] = ["device", "time_of_day", "cognitive_mode", "behavioral_stage", "attention"];

/// Group label for records seen before any value of the key.
pub const UNKNOWN_GROUP: &str = "unknown";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FairnessError {
    #[error("unknown grouping key {0:?}; expected one of {GROUPING_KEYS:?}")]
    UnknownKey(String),
    #[error("threshold must exceed 1, got {0}")]
    BadThreshold(f64),
}

fn source(key: &str) -> Option<(TraceStage, &'static str)> {
    Some(match key {
        "device" => (TraceStage::Context, "device"),
        "time_of_day" => (TraceStage::Context, "time_of_day"),
        "cognitive_mode" => (TraceStage::CognitiveMode, "value"),
        "behavioral_stage" => (TraceStage::BehavioralStage, "value"),
        "attention" => (TraceStage::Attention, "value"),
        _ => return None,
    })
}

/// max/min over the block rates of groups with at least one outcome.
pub fn disparity_ratio(per_group: &BTreeMap<String, GroupStats>) -> f64 {
    let rates: Vec<f64> = per_group.values().filter_map(GroupStats::block_rate).collect();
    if rates.len() < 2 {
        return 1.0;
    }
    let max = rates.iter().copied().fold(f64::MIN, f64::max);
    let min = rates.iter().copied().fold(f64::MAX, f64::min);
    if max == 0.0 {
        1.0
    } else if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn audit_fairness(traces: &[TraceRecord], grouping_key: &str, threshold: f64) -> Result<FairnessReport, FairnessError> {
    let (stage, field) = source(grouping_key).ok_or_else(|| FairnessError::UnknownKey(grouping_key.to_string()))?;
    if threshold.is_nan() || threshold <= 1.0 {
        return Err(FairnessError::BadThreshold(threshold));
    }
    let mut sorted: Vec<&TraceRecord> = traces.iter().collect();
    sorted.sort_by(|a, b| a.session_id.cmp(&b.session_id).then(a.seq.cmp(&b.seq)));
    let mut current: HashMap<&SessionId, String> = HashMap::new();
    let mut per_group: BTreeMap<String, GroupStats> = BTreeMap::new();
    for r in sorted {
        if r.stage == stage {
            if let Some(v) = payload_field(&r.payload, field).and_then(|v| v.as_str().map(str::to_string)) {
                current.insert(&r.session_id, v);
            }
            continue;
        }
        let group = || current.get(&r.session_id).cloned().unwrap_or_else(|| UNKNOWN_GROUP.to_string());
        match r.stage {
            TraceStage::ComplianceVerdict if verdict_passed(r) == Some(false) => {
                per_group.entry(group()).or_default().blocked += 1;
            }
            TraceStage::Delivery => {
                let stats = per_group.entry(group()).or_default();
                stats.delivered += 1;
                let strategy = payload_field(&r.payload, "strategy_id")
                    .and_then(|v| v.as_str().map(str::to_string))
                    .unwrap_or_else(|| UNKNOWN_GROUP.to_string());
                *stats.strategy_histogram.entry(strategy).or_default() += 1;
            }
            _ => {}
        }
    }
    let disparity_ratio = disparity_ratio(&per_group);
    Ok(FairnessReport {
        grouping_key: grouping_key.to_string(),
        per_group,
        disparity_ratio,
        flagged: disparity_ratio > threshold,
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canonical::canonical_serialize;

    fn stats(delivered: u64, blocked: u64) -> GroupStats {
        GroupStats { delivered, blocked, ..Default::default() }
    }

    #[test]
    fn ratio_edge_cases() {
        let mut g = BTreeMap::new();
        g.insert("a".to_string(), stats(7, 3));
        g.insert("b".to_string(), stats(9, 1));
        assert!((disparity_ratio(&g) - 3.0).abs() < 1e-12);
        g.insert("empty".to_string(), stats(0, 0));
        assert!((disparity_ratio(&g) - 3.0).abs() < 1e-12);
        let single: BTreeMap<_, _> = [("a".to_string(), stats(1, 1))].into();
        assert_eq!(disparity_ratio(&single), 1.0);
        let zeroes: BTreeMap<_, _> = [("a".to_string(), stats(5, 0)), ("b".to_string(), stats(3, 0))].into();
        assert_eq!(disparity_ratio(&zeroes), 1.0);
        let one_zero: BTreeMap<_, _> = [("a".to_string(), stats(5, 0)), ("b".to_string(), stats(3, 1))].into();
        assert!(disparity_ratio(&one_zero).is_infinite());
    }

    #[test]
    fn unknown_key_and_bad_threshold() {
        assert_eq!(audit_fairness(&[], "age", 2.0), Err(FairnessError::UnknownKey("age".into())));
        assert_eq!(audit_fairness(&[], "device", 1.0), Err(FairnessError::BadThreshold(1.0)));
        let empty = audit_fairness(&[], "device", 2.0).unwrap();
        assert_eq!(empty.disparity_ratio, 1.0);
        assert!(!empty.flagged);
    }

    #[test]
    fn infinite_ratio_serializes() {
        let r = FairnessReport {
            grouping_key: "device".into(),
            per_group: BTreeMap::new(),
            disparity_ratio: f64::INFINITY,
            flagged: true,
            threshold: 2.0,
        };
        let text = String::from_utf8(canonical_serialize(&r).unwrap()).unwrap();
        assert!(text.contains("\"disparity_ratio\":\"inf\""), "{text}");
    }
}
