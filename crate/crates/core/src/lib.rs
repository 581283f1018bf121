//! Adaptive digital-nudging engine for household energy use.
//!
//! Behavioral signals are captured per session, classified into a
//! three-dimensional profile, matched to a nudging strategy, turned into a
//! message, checked by the compliance interceptor and delivered together
//! with a UI context and an explanation. Every stage is traced.

pub mod canonical;
pub mod capture;
pub mod config;
pub mod domain;
pub mod gateway;
pub mod guardrails;
pub mod intelligence;
pub mod modeling;
pub mod orchestrator;
pub mod sim;
