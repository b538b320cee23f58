use thiserror::Error;
use vigil_core::ProtocolError;
use vigil_sim::SimError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    /// The simulation broke one of its own invariants.
    #[error("invariant violated: {0}")]
    Invariant(SimError),
    #[error("internal error: {0}")]
    Internal(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// Sorts a simulator error into bad input or internal failure.
    pub fn from_sim(e: SimError) -> Self {
        match e {
            SimError::ConfigInvalid(_) | SimError::Trace(_) | SimError::NoLink { .. } => CliError::Config(e.to_string()),
            SimError::Protocol { source: ProtocolError::InvalidConfig { .. } | ProtocolError::InvalidPeer { .. }, .. } => {
                CliError::Config(e.to_string())
            }
            e if e.is_invariant_violation() => CliError::Invariant(e),
            e => CliError::Internal(e.to_string()),
        }
    }

    /// 0 is success; 1 bad config or usage; 2 invariant violation or other
    /// internal failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Invariant(_) | CliError::Internal(_) | CliError::Io(_) => 2,
        }
    }
}
