//! Command-line front end: run configurations, presets, reports,
//! multi-seed replication and the power model table.

pub mod config;
pub mod error;
pub mod power;
pub mod presets;
pub mod replicate;
pub mod report;

pub use config::{apply_override, LinkEntry, NodeEntry, RunConfig, TraceFiles};
pub use error::CliError;
