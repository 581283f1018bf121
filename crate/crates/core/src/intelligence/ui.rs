//! UI adaptation: the presentation parameters the dashboard must apply.

use crate::config::UiTable;
use crate::domain::{AttentionLevel, ChartType, CognitiveMode, UiContext, UserProfile};

pub fn chart_for(cognitive: CognitiveMode, attention: AttentionLevel) -> ChartType {
    match (attention, cognitive) {
        (AttentionLevel::Low, _) => ChartType::Bar,
        (_, CognitiveMode::Analytical) => ChartType::Line,
        (_, CognitiveMode::Intuitive) => ChartType::Pie,
    }
}

pub fn adapt_ui(profile: &UserProfile, table: &UiTable) -> UiContext {
    let [primary, secondary] = table
        .palette
        .get(&profile.stage)
        .cloned()
        .unwrap_or_else(|| ["#1F4E79".into(), "#9DC3E6".into()]);
    UiContext {
        font_size_px: table.font_for(profile.cognitive, profile.stage, profile.attention),
        primary_color: primary,
        secondary_color: secondary,
        chart_type: chart_for(profile.cognitive, profile.attention),
    }
}
