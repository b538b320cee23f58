//! Wire messages exchanged between nodes and their fixed binary layout.
//!
//! ```text
//! byte  0      kind (1 = request, 2 = response, 3 = notification)
//! bytes 1..3   sender id, u16 LE
//! bytes 3..5   session initiator id, u16 LE
//! bytes 5..9   session sequence number, u32 LE
//! byte  9      scenario code
//! response:     raw_mean f32 LE, normalized f32 LE, weight f32 LE   (22 bytes)
//! notification: decision u8 (0/1), total_weighted_vote f32 LE        (15 bytes)
//! ```

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest payload the modeled radio accepts in one datagram.
pub const MAX_DATAGRAM_LEN: usize = 250;
pub const HEADER_LEN: usize = 10;
pub const RESPONSE_LEN: usize = HEADER_LEN + 12;
pub const NOTIFICATION_LEN: usize = HEADER_LEN + 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u16);

impl NodeId {
    /// Reserved; never assigned to a real node.
    pub const BROADCAST: NodeId = NodeId(0xFFFF);

    pub fn is_broadcast(self) -> bool {
        self == Self::BROADCAST
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum ScenarioId {
    Fire = 0,
    GasLeak = 1,
    WaterLeak = 2,
    Earthquake = 3,
    Intrusion = 4,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 5] = [
        ScenarioId::Fire,
        ScenarioId::GasLeak,
        ScenarioId::WaterLeak,
        ScenarioId::Earthquake,
        ScenarioId::Intrusion,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioId::Fire => "fire",
            ScenarioId::GasLeak => "gas_leak",
            ScenarioId::WaterLeak => "water_leak",
            ScenarioId::Earthquake => "earthquake",
            ScenarioId::Intrusion => "intrusion",
        }
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Identifies one voting session. Sequence numbers are per initiator and
/// never reused within a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SessionId {
    pub initiator: NodeId,
    pub seq: u32,
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.initiator, self.seq)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MessageKind {
    VoteRequest = 1,
    VoteResponse = 2,
    VoteNotification = 3,
}

impl MessageKind {
    fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Self::VoteRequest),
            2 => Some(Self::VoteResponse),
            3 => Some(Self::VoteNotification),
            _ => None,
        }
    }

    pub fn encoded_len(self) -> usize {
        match self {
            Self::VoteRequest => HEADER_LEN,
            Self::VoteResponse => RESPONSE_LEN,
            Self::VoteNotification => NOTIFICATION_LEN,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::VoteRequest => "vote_request",
            Self::VoteResponse => "vote_response",
            Self::VoteNotification => "vote_notification",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Payload {
    Request,
    Response { raw_mean: f32, normalized: f32, weight: f32 },
    Notification { decision: bool, total_weighted_vote: f32 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Message {
    pub session: SessionId,
    pub sender: NodeId,
    pub scenario: ScenarioId,
    pub payload: Payload,
}

impl Message {
    pub fn request(session: SessionId, sender: NodeId, scenario: ScenarioId) -> Self {
        Self { session, sender, scenario, payload: Payload::Request }
    }

    pub fn kind(&self) -> MessageKind {
        match self.payload {
            Payload::Request => MessageKind::VoteRequest,
            Payload::Response { .. } => MessageKind::VoteResponse,
            Payload::Notification { .. } => MessageKind::VoteNotification,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MalformedMessage {
    #[error("empty datagram")]
    Empty,
    #[error("unknown message kind {0:#04x}")]
    UnknownKind(u8),
    #[error("{kind} must be {expected} bytes, got {actual}")]
    WrongLength { kind: &'static str, expected: usize, actual: usize },
    #[error("unknown scenario code {0}")]
    UnknownScenario(u8),
    #[error("decision byte must be 0 or 1, got {0}")]
    InvalidDecision(u8),
    #[error("normalized vote must be 0 or 1")]
    InvalidVote,
}

pub fn encode_message(m: &Message) -> Vec<u8> {
    let kind = m.kind();
    let mut out = Vec::with_capacity(kind.encoded_len());
    out.push(kind as u8);
    out.extend_from_slice(&m.sender.0.to_le_bytes());
    out.extend_from_slice(&m.session.initiator.0.to_le_bytes());
    out.extend_from_slice(&m.session.seq.to_le_bytes());
    out.push(m.scenario.code());
    match m.payload {
        Payload::Request => {}
        Payload::Response { raw_mean, normalized, weight } => {
            out.extend_from_slice(&raw_mean.to_le_bytes());
            out.extend_from_slice(&normalized.to_le_bytes());
            out.extend_from_slice(&weight.to_le_bytes());
        }
        Payload::Notification { decision, total_weighted_vote } => {
            out.push(u8::from(decision));
            out.extend_from_slice(&total_weighted_vote.to_le_bytes());
        }
    }
    debug_assert!(out.len() <= MAX_DATAGRAM_LEN);
    out
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn f32_at(b: &[u8], at: usize) -> f32 {
    f32::from_bits(u32_at(b, at))
}

pub fn decode_message(b: &[u8]) -> Result<Message, MalformedMessage> {
    let &code = b.first().ok_or(MalformedMessage::Empty)?;
    let kind = MessageKind::from_code(code).ok_or(MalformedMessage::UnknownKind(code))?;
    if b.len() != kind.encoded_len() {
        return Err(MalformedMessage::WrongLength {
            kind: kind.as_str(),
            expected: kind.encoded_len(),
            actual: b.len(),
        });
    }
    let sender = NodeId(u16_at(b, 1));
    let session = SessionId { initiator: NodeId(u16_at(b, 3)), seq: u32_at(b, 5) };
    let scenario = ScenarioId::from_code(b[9]).ok_or(MalformedMessage::UnknownScenario(b[9]))?;
    let payload = match kind {
        MessageKind::VoteRequest => Payload::Request,
        MessageKind::VoteResponse => {
            let normalized = f32_at(b, 14);
            if normalized != 0.0 && normalized != 1.0 {
                return Err(MalformedMessage::InvalidVote);
            }
            Payload::Response { raw_mean: f32_at(b, 10), normalized, weight: f32_at(b, 18) }
        }
        MessageKind::VoteNotification => {
            let decision = match b[10] {
                0 => false,
                1 => true,
                other => return Err(MalformedMessage::InvalidDecision(other)),
            };
            Payload::Notification { decision, total_weighted_vote: f32_at(b, 11) }
        }
    };
    Ok(Message { session, sender, scenario, payload })
}
