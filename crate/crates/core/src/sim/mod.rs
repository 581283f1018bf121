//! Synthetic users for replays and acceptance runs.

pub mod persona;
pub mod replay;

pub use persona::{random_personas, reference_personas, simulate_session, Persona, SimulatedSession};
pub use replay::{replay, HttpDriver, InProcessDriver, ReplayReport, SessionDriver};
