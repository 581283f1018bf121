//! Side-mounted evaluation: guardrail prompts, the compliance interceptor,
//! the trace log, emotion deltas and the fairness audit.

pub mod compliance;
pub mod emotion;
pub mod fairness;
pub mod prompts;
pub mod trace;
