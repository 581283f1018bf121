//! Strategy optimizer, nudge generator and UI adaptation.

pub mod generation;
pub mod selection;
pub mod taxonomy;
pub mod ui;
