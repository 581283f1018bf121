//! Engine configuration: one TOML file plus environment overrides for the
//! language-model endpoint. Every threshold the classifiers and the pipeline
//! use is a knob here; the defaults live in `assets/config.toml`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::domain::{AttentionLevel, BehavioralStage, CognitiveMode, MAX_FONT_PX};

pub const DEFAULT_CONFIG: &str = include_str!("../assets/config.toml");

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub version: String,
    pub capture: CaptureSettings,
    pub modeling: ModelingThresholds,
    pub ui: UiTable,
    pub pipeline: PipelineSettings,
    pub llm: LlmSettings,
    pub fairness: FairnessSettings,
    #[serde(default)]
    pub paths: DataPaths,
}

/// Daypart boundaries, as local hours: `[morning, afternoon)` is Morning and
/// so on, with Evening wrapping past midnight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureSettings {
    pub morning_start_hour: u32,
    pub afternoon_start_hour: u32,
    pub evening_start_hour: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelingThresholds {
    pub analytical_min_clicks: u64,
    pub analytical_min_hesitation_ms: f64,
    pub high_wattage_w: f64,
    pub attention_max_hesitation_ms: f64,
    pub attention_min_clicks: u64,
    pub maintenance_sessions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UiTable {
    pub font_low: u32,
    pub font_medium: u32,
    pub font_high: u32,
    #[serde(default)]
    pub font_overrides: Vec<FontOverride>,
    /// Stage label -> [primary, secondary].
    pub palette: BTreeMap<BehavioralStage, [String; 2]>,
}

/// Replaces the attention-based font for one (attention, stage) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FontOverride {
    pub attention: AttentionLevel,
    pub stage: BehavioralStage,
    #[serde(default)]
    pub cognitive: Option<CognitiveMode>,
    pub font_size_px: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSettings {
    /// Generation attempts with the first selected strategy.
    pub regeneration_attempts: u32,
    /// How many times a failing strategy may be swapped out.
    pub strategy_swaps: u32,
    /// Generation attempts after a swap.
    pub attempts_after_swap: u32,
    /// When set, an ingestion batch that brings the session's appliance
    /// action count to a multiple of this value triggers a run.
    #[serde(default)]
    pub auto_run_after_actions: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmSettings {
    pub mock: bool,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub api_key: Option<String>,
    pub classification_temperature: f64,
    pub generation_temperature: f64,
    pub deadline_ms: u64,
    pub retry_backoff_ms: u64,
    pub max_in_flight: usize,
    pub max_message_chars: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessSettings {
    pub threshold: f64,
}

/// Optional file overrides for the shipped data assets.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DataPaths {
    pub taxonomy: Option<PathBuf>,
    pub guardrails: Option<PathBuf>,
    pub rules: Option<PathBuf>,
    pub lexicon_dir: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub mock_table: Option<PathBuf>,
    pub trace_csv: Option<PathBuf>,
    pub session_dir: Option<PathBuf>,
}

impl Default for Settings {
    fn default() -> Self {
        Settings::from_toml(DEFAULT_CONFIG).expect("shipped config is valid")
    }
}

impl Settings {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let s: Settings = toml::from_str(text)?;
        s.check()?;
        Ok(s)
    }

    /// Loads a config file; relative data paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let mut s = Self::from_toml(&text)?;
        if let Some(dir) = path.parent() {
            s.paths.resolve_against(dir);
        }
        Ok(s)
    }

    /// Applies `NUDGE_LLM_ENDPOINT`, `NUDGE_LLM_MODEL`, `NUDGE_LLM_API_KEY`
    /// and `NUDGE_LLM_MOCK`.
    pub fn with_env_overrides(mut self) -> Self {
        self.apply_overrides(|k| std::env::var(k).ok());
        self
    }

    pub fn apply_overrides(&mut self, get: impl Fn(&str) -> Option<String>) {
        if let Some(v) = get("NUDGE_LLM_ENDPOINT") {
            self.llm.endpoint = Some(v);
        }
        if let Some(v) = get("NUDGE_LLM_MODEL") {
            self.llm.model = Some(v);
        }
        if let Some(v) = get("NUDGE_LLM_API_KEY") {
            self.llm.api_key = Some(v);
        }
        if let Some(v) = get("NUDGE_LLM_MOCK") {
            self.llm.mock = matches!(v.trim(), "1" | "true" | "yes");
        }
    }

    fn check(&self) -> Result<(), ConfigError> {
        let c = &self.capture;
        if !(c.morning_start_hour < c.afternoon_start_hour
            && c.afternoon_start_hour < c.evening_start_hour
            && c.evening_start_hour < 24)
        {
            return Err(ConfigError::Invalid("daypart hours must increase within 0..24".into()));
        }
        self.ui.check()?;
        if self.pipeline.regeneration_attempts == 0 {
            return Err(ConfigError::Invalid("regeneration_attempts must be at least 1".into()));
        }
        for t in [self.llm.classification_temperature, self.llm.generation_temperature] {
            if !(0.0..=2.0).contains(&t) {
                return Err(ConfigError::Invalid(format!("temperature {t} outside [0, 2]")));
            }
        }
        if self.llm.max_in_flight == 0 {
            return Err(ConfigError::Invalid("max_in_flight must be positive".into()));
        }
        if self.fairness.threshold <= 1.0 {
            return Err(ConfigError::Invalid("fairness threshold must exceed 1".into()));
        }
        Ok(())
    }
}

impl DataPaths {
    fn resolve_against(&mut self, dir: &Path) {
        for p in [
            &mut self.taxonomy,
            &mut self.guardrails,
            &mut self.rules,
            &mut self.lexicon_dir,
            &mut self.templates,
            &mut self.mock_table,
            &mut self.trace_csv,
            &mut self.session_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
    }
}

impl UiTable {
    pub fn base_font(&self, attention: AttentionLevel) -> u32 {
        match attention {
            AttentionLevel::Low => self.font_low,
            AttentionLevel::Medium => self.font_medium,
            AttentionLevel::High => self.font_high,
        }
    }

    pub fn font_for(&self, cognitive: CognitiveMode, stage: BehavioralStage, attention: AttentionLevel) -> u32 {
        self.font_overrides
            .iter()
            .find(|o| {
                o.attention == attention
                    && o.stage == stage
                    && o.cognitive.is_none_or(|c| c == cognitive)
            })
            .map_or_else(|| self.base_font(attention), |o| o.font_size_px)
    }

    /// Rejects tables that break the simplification ordering or leave a
    /// stage without colors.
    fn check(&self) -> Result<(), ConfigError> {
        if self.font_low != MAX_FONT_PX {
            return Err(ConfigError::Invalid(format!(
                "low-attention font must be the maximum ({MAX_FONT_PX}px)"
            )));
        }
        for &stage in BehavioralStage::ALL {
            let colors = self
                .palette
                .get(&stage)
                .ok_or_else(|| ConfigError::Invalid(format!("palette has no entry for {stage}")))?;
            if !colors.iter().all(|c| crate::domain::is_hex_color(c)) {
                return Err(ConfigError::Invalid(format!("palette for {stage} is not #RRGGBB")));
            }
            for &mode in CognitiveMode::ALL {
                let [low, med, high] =
                    [AttentionLevel::Low, AttentionLevel::Medium, AttentionLevel::High]
                        .map(|a| self.font_for(mode, stage, a));
                if !(low >= med && med >= high) {
                    return Err(ConfigError::Invalid(format!(
                        "font sizes for ({mode}, {stage}) are not monotone: {low}/{med}/{high}"
                    )));
                }
                if [low, med, high]
                    .iter()
                    .any(|f| !(crate::domain::MIN_FONT_PX..=MAX_FONT_PX).contains(f))
                {
                    return Err(ConfigError::Invalid("font size outside [12, 24]".into()));
                }
            }
        }
        Ok(())
    }
}
