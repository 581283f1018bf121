//! Pipeline orchestration, explanations, session storage and the HTTP API.

pub mod engine;
pub mod explain;
pub mod http;
pub mod store;

pub use engine::{Engine, EngineError, PipelineOutcome};
