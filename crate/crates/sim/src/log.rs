use serde::{Deserialize, Serialize};
use serde_json::Value;
use vigil_core::{NodeId, SimTime};

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub time_ms: SimTime,
    pub node: Option<NodeId>,
    pub event: String,
    pub details: Value,
}

impl LogRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("log records serialize")
    }
}

/// Writes records as JSON lines.
pub fn write_jsonl(records: &[LogRecord], mut out: impl std::io::Write) -> std::io::Result<()> {
    for r in records {
        writeln!(out, "{}", r.to_json_line())?;
    }
    Ok(())
}
