//! Pre/post emotion comparison.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::canonical::{format_fixed6, InvariantViolation, Validate};
use crate::domain::{EmotionDistribution, EmotionPhase};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("expected a {expected} frame, got {got}")]
pub struct PhaseMismatch {
    pub expected: EmotionPhase,
    pub got: EmotionPhase,
}

/// Component-wise `post - pre`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionDelta {
    pub happiness: f64,
    pub sadness: f64,
    pub anger: f64,
    pub fear: f64,
    pub disgust: f64,
    pub surprise: f64,
    pub neutral: f64,
}

impl EmotionDelta {
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

    /// Six-decimal rendering of every component.
    pub fn formatted(&self) -> BTreeMap<&'static str, String> {
        self.components().into_iter().map(|(k, v)| (k, format_fixed6(v))).collect()
    }
}

impl Validate for EmotionDelta {
    fn validate(&self) -> Result<(), InvariantViolation> {
        for (k, v) in self.components() {
            if !(-1.0..=1.0).contains(&v) {
                return Err(InvariantViolation::new("EmotionDelta", format!("{k} = {v} outside [-1, 1]")));
            }
        }
        Ok(())
    }
}

pub fn emotion_delta(pre: &EmotionDistribution, post: &EmotionDistribution) -> Result<EmotionDelta, PhaseMismatch> {
    if pre.phase != EmotionPhase::PreNudge {
        return Err(PhaseMismatch { expected: EmotionPhase::PreNudge, got: pre.phase });
    }
    if post.phase != EmotionPhase::PostNudge {
        return Err(PhaseMismatch { expected: EmotionPhase::PostNudge, got: post.phase });
    }
    Ok(EmotionDelta {
        happiness: post.happiness - pre.happiness,
        sadness: post.sadness - pre.sadness,
        anger: post.anger - pre.anger,
        fear: post.fear - pre.fear,
        disgust: post.disgust - pre.disgust,
        surprise: post.surprise - pre.surprise,
        neutral: post.neutral - pre.neutral,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::EmotionFields;
    use chrono::{DateTime, Utc};

    fn t0() -> DateTime<Utc> {
        "2025-03-03T09:30:00Z".parse().unwrap()
    }

    fn frame(happiness: f64, neutral: f64, phase: EmotionPhase) -> EmotionDistribution {
        let mut f = EmotionFields::neutral_dominant(happiness, t0(), phase);
        f.neutral = neutral;
        EmotionDistribution::new(f).unwrap()
    }

    #[test]
    fn happiness_increase_matches_reported_value() {
        let pre = frame(0.000170, 1.0 - 0.000170, EmotionPhase::PreNudge);
        let post = frame(0.000500, 1.0 - 0.000500, EmotionPhase::PostNudge);
        let d = emotion_delta(&pre, &post).unwrap();
        assert_eq!(d.formatted()["happiness"], "0.000330");
    }

    #[test]
    fn neutral_shift() {
        // Neutral 0.97 -> 0.90 with happiness absorbing the 0.07.
        let pre = frame(0.03, 0.97, EmotionPhase::PreNudge);
        let post = frame(0.10, 0.90, EmotionPhase::PostNudge);
        let d = emotion_delta(&pre, &post).unwrap();
        assert_eq!(d.formatted()["neutral"], "-0.070000");
        assert_eq!(d.formatted()["happiness"], "0.070000");
    }

    #[test]
    fn phase_mismatch_rejected() {
        let pre = frame(0.1, 0.9, EmotionPhase::PreNudge);
        assert!(emotion_delta(&pre, &pre).is_err());
        let zero = emotion_delta(&pre, &pre.with_phase(EmotionPhase::PostNudge)).unwrap();
        assert!(zero.components().iter().all(|(_, v)| *v == 0.0));
    }
}
