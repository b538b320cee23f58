use thiserror::Error;
use vigil_core::detection::{DetectionError, SensorKind};
use vigil_core::{NodeId, ProtocolError};

use crate::trace::TraceError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    ConfigInvalid(String),
    #[error("no link from {from} to {to}")]
    NoLink { from: NodeId, to: NodeId },
    #[error("node {node}: {source}")]
    Protocol { node: NodeId, source: ProtocolError },
    #[error("node {node} calibration failed: {source}")]
    Calibration { node: NodeId, source: DetectionError },
    #[error("no ambient value for sensor channel `{}`", .0.as_str())]
    UnknownChannel(SensorKind),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

impl SimError {
    /// An illegal duty transition is the simulator's invariant violation.
    pub fn is_invariant_violation(&self) -> bool {
        matches!(self, SimError::Protocol { source: ProtocolError::IllegalTransition { .. } | ProtocolError::NotListening, .. })
    }
}
