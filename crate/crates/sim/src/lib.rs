//! Seeded discrete-event simulator around the sans-IO node state machine.
//!
//! A run is fully determined by its [`SimConfig`]: topology, per-node
//! configuration, stimulus script and seed. The engine owns a single clock
//! and a single random generator; every loss draw and noise sample is taken
//! in event order, so two runs with identical inputs produce identical
//! event logs.

pub mod engine;
pub mod environment;
pub mod error;
pub mod log;
pub mod queue;
pub mod range;
pub mod script;
pub mod topology;
pub mod trace;

pub use engine::{run, MessageCounters, NodeSetup, RunOutput, SessionRecord, SimConfig, Simulation};
pub use environment::Environment;
pub use error::SimError;
pub use log::LogRecord;
pub use range::{range_test, RangeReport, RangeSpec};
pub use script::{ScriptEntry, Stimulus, StimulusScript};
pub use topology::{LinkModel, NodeSpec, Topology};
pub use trace::{load_trace, Trace, TraceChannel, TraceError, TraceSet};

pub use vigil_core::SimTime;
