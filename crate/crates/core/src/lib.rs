//! Protocol kernel for a decentralized multi-sensor emergency-detection
//! network.
//!
//! Everything in this crate is sans-IO: the node state machine consumes
//! messages, timer ticks and sensor readings handed to it by a harness and
//! returns the actions the harness should carry out. No clocks, sockets or
//! threads live here.

pub mod config;
pub mod detection;
pub mod message;
pub mod node;
pub mod power;
pub mod session;
pub mod vote;

pub use config::{PerScenario, ProtocolConfig};
pub use message::{decode_message, encode_message, MalformedMessage, Message, NodeId, Payload, ScenarioId, SessionId};
pub use node::{Action, DutyState, NodeProtocolState, ProtocolError, VoteSource, WakeReason};
pub use session::{SessionState, Tally, VotingSession};
pub use vote::{compute_vote, rebalance_weights, MajorityRule, Vote, VoteError};

/// Milliseconds since the start of a run.
pub type SimTime = u64;
