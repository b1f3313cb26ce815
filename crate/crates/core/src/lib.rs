//! Orchestration kernel and simulation harness for stage-gated multi-agent
//! pipelines with layered critique.
//!
//! The crate is organized around eight public modules:
//!
//! - [`kernel`] — typed message envelopes, role/phase visibility, dispatch
//! - [`plan`] — execution plans as DAGs with pre-declared acceptance criteria
//! - [`agent`] — stochastic and scripted stand-in agents with seeded rng streams
//! - [`cascade`] — layered critique loops, verdicts, and the closed-form model
//! - [`exec`] — context-isolated tabular execution behind opaque handles
//! - [`store`] — event-sourced session logs, checkpoints, and audit traversals
//! - [`harness`] — Monte Carlo cohorts, recovery ledgers, architecture comparison
//! - [`config`] — behavior profiles and calibrated defaults
//!
//! [`session`] ties the modules together into a deterministic session runner;
//! [`scenario`] assembles the bundled reconciliation fixture; [`report`]
//! renders aligned text tables plus machine-readable mirrors.

pub mod agent;
pub mod artifact;
pub mod cascade;
pub mod config;
pub mod exec;
pub mod fixtures;
pub mod harness;
pub mod ids;
pub mod kernel;
pub mod plan;
pub mod reason;
pub mod report;
pub mod scenario;
pub mod session;
pub mod store;

/// Version stamped into payload schemas, log headers, and checkpoints.
/// Readers reject anything newer than they understand.
pub const SCHEMA_VERSION: u32 = 1;
