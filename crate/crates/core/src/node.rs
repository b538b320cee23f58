//! The per-node protocol state machine.
//!
//! A harness drives it with three kinds of input: delivered messages
//! ([`NodeProtocolState::handle_message`]), timer ticks
//! ([`NodeProtocolState::on_timer`]) and local detections
//! ([`NodeProtocolState::initiate_voting`]). Each returns the actions the
//! harness has to carry out. Duty-cycle changes go through
//! [`NodeProtocolState::duty_transition`], which rejects illegal moves.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::config::ProtocolConfig;
use crate::message::{Message, NodeId, Payload, ScenarioId, SessionId};
use crate::session::{RecordOutcome, SessionState, VotingSession};
use crate::vote::Vote;
use crate::SimTime;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("invalid protocol config `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("node {node} cannot list itself or the broadcast id as a peer")]
    InvalidPeer { node: NodeId },
    #[error("a {scenario} session initiated by this node is still collecting")]
    DuplicateSession { scenario: ScenarioId },
    #[error("voting is only initiated on a positive local vote")]
    NotPositive,
    #[error("illegal duty transition from {from:?} with {reason:?}")]
    IllegalTransition { from: DutyState, reason: Option<WakeReason> },
    #[error("messages cannot be consumed in deep sleep")]
    NotListening,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DutyState {
    DeepSleep,
    IdleUptime,
    ActiveUptime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum WakeReason {
    Timer,
    SensorThreshold(ScenarioId),
    ExternalMessage,
}

/// Supplies fresh local measurements when a vote request arrives.
pub trait VoteSource {
    fn vote(&mut self, scenario: ScenarioId, now: SimTime, weight: f64) -> Vote;
}

impl<F: FnMut(ScenarioId, SimTime, f64) -> Vote> VoteSource for F {
    fn vote(&mut self, scenario: ScenarioId, now: SimTime, weight: f64) -> Vote {
        self(scenario, now, weight)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum IgnoreReason {
    UnknownSession,
    AlreadyDecided,
    DuplicateResponse,
    UnexpectedSender,
    OwnMessage,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Send { to: NodeId, message: Message, retransmit: bool },
    OpenSession { session: SessionId, scenario: ScenarioId, cascaded: bool },
    RecordResponse { session: SessionId, from: NodeId, vote: Vote },
    Decide { session: SessionId, scenario: ScenarioId, decision: bool, total: f64, rebalanced: bool, voters: usize },
    /// A notification from another initiator was recorded; `closed` lists
    /// the local sessions it settled.
    NetworkDecision { session: SessionId, scenario: ScenarioId, decision: bool, total: f64, closed: Vec<SessionId> },
    Ignore { session: SessionId, from: NodeId, reason: IgnoreReason },
}

#[derive(Debug, Clone)]
pub struct NodeProtocolState {
    id: NodeId,
    config: ProtocolConfig,
    peers: BTreeMap<NodeId, f64>,
    duty: DutyState,
    duty_since: SimTime,
    uptime_since: Option<SimTime>,
    wake_reason: Option<WakeReason>,
    sessions: BTreeMap<SessionId, VotingSession>,
    network_decisions: BTreeMap<SessionId, bool>,
    last_own_decision: BTreeMap<ScenarioId, SimTime>,
    next_seq: u32,
}

impl NodeProtocolState {
    /// `peers` maps every single-hop neighbor to its nominal weight. The node
    /// starts in deep sleep.
    pub fn new(id: NodeId, config: ProtocolConfig, peers: BTreeMap<NodeId, f64>) -> Result<Self, ProtocolError> {
        config.validate()?;
        if id.is_broadcast() || peers.contains_key(&id) || peers.contains_key(&NodeId::BROADCAST) {
            return Err(ProtocolError::InvalidPeer { node: id });
        }
        let next_seq = config.seq_counter;
        Ok(Self {
            id,
            config,
            peers,
            duty: DutyState::DeepSleep,
            duty_since: 0,
            uptime_since: None,
            wake_reason: None,
            sessions: BTreeMap::new(),
            network_decisions: BTreeMap::new(),
            last_own_decision: BTreeMap::new(),
            next_seq,
        })
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn config(&self) -> &ProtocolConfig {
        &self.config
    }

    pub fn peers(&self) -> &BTreeMap<NodeId, f64> {
        &self.peers
    }

    pub fn duty(&self) -> DutyState {
        self.duty
    }

    pub fn duty_since(&self) -> SimTime {
        self.duty_since
    }

    /// Start of the current uptime (idle or active); `None` while asleep.
    pub fn uptime_since(&self) -> Option<SimTime> {
        self.uptime_since
    }

    pub fn wake_reason(&self) -> Option<WakeReason> {
        self.wake_reason
    }

    pub fn next_seq(&self) -> u32 {
        self.next_seq
    }

    pub fn sessions(&self) -> &BTreeMap<SessionId, VotingSession> {
        &self.sessions
    }

    pub fn session(&self, id: SessionId) -> Option<&VotingSession> {
        self.sessions.get(&id)
    }

    /// Decisions this node learned about, its own sessions included.
    pub fn network_decisions(&self) -> &BTreeMap<SessionId, bool> {
        &self.network_decisions
    }

    pub fn has_collecting(&self) -> bool {
        self.sessions.values().any(VotingSession::is_collecting)
    }

    fn collecting_for(&self, scenario: ScenarioId) -> bool {
        self.sessions.values().any(|s| s.scenario == scenario && s.is_collecting())
    }

    /// Whether a local detection for `scenario` may open a new own session.
    pub fn can_initiate(&self, scenario: ScenarioId, now: SimTime) -> bool {
        if self.collecting_for(scenario) {
            return false;
        }
        match self.last_own_decision.get(&scenario) {
            Some(&at) => now >= at + self.config.retrigger_holdoff_ms,
            None => true,
        }
    }

    /// Earliest time `on_timer` has work to do.
    pub fn next_timer(&self) -> Option<SimTime> {
        self.sessions
            .values()
            .filter(|s| s.is_collecting())
            .map(|s| s.next_retransmit.min(s.deadline))
            .min()
    }

    pub fn duty_transition(&mut self, now: SimTime, reason: Option<WakeReason>) -> Result<DutyState, ProtocolError> {
        use DutyState::*;
        let illegal = Err(ProtocolError::IllegalTransition { from: self.duty, reason });
        let next = match (self.duty, reason) {
            (DeepSleep, Some(WakeReason::Timer)) => IdleUptime,
            (DeepSleep, Some(WakeReason::SensorThreshold(_))) => ActiveUptime,
            (IdleUptime, Some(WakeReason::ExternalMessage | WakeReason::SensorThreshold(_))) => ActiveUptime,
            (IdleUptime, None) => {
                let since = self.uptime_since.unwrap_or(self.duty_since);
                if now < since + self.config.idle_listen_ms || self.has_collecting() {
                    return illegal;
                }
                DeepSleep
            }
            (ActiveUptime, Some(WakeReason::ExternalMessage | WakeReason::SensorThreshold(_))) => {
                return Ok(ActiveUptime);
            }
            (ActiveUptime, None) => {
                if self.has_collecting() {
                    return illegal;
                }
                DeepSleep
            }
            _ => return illegal,
        };
        if self.duty == DeepSleep {
            self.uptime_since = Some(now);
        }
        if next == DeepSleep {
            self.uptime_since = None;
        }
        if reason.is_some() {
            self.wake_reason = reason;
        }
        self.duty = next;
        self.duty_since = now;
        Ok(next)
    }

    /// Opens an own session after a positive local vote and fans a request
    /// out to every neighbor.
    pub fn initiate_voting(&mut self, scenario: ScenarioId, own_vote: Vote, now: SimTime) -> Result<Vec<Action>, ProtocolError> {
        self.open_session(scenario, own_vote, now, false)
    }

    fn open_session(&mut self, scenario: ScenarioId, own_vote: Vote, now: SimTime, cascaded: bool) -> Result<Vec<Action>, ProtocolError> {
        if !own_vote.positive() {
            return Err(ProtocolError::NotPositive);
        }
        if self.collecting_for(scenario) {
            return Err(ProtocolError::DuplicateSession { scenario });
        }
        let id = SessionId { initiator: self.id, seq: self.next_seq };
        self.next_seq = self.next_seq.wrapping_add(1);
        let session = VotingSession {
            id,
            scenario,
            own_vote,
            responses: BTreeMap::new(),
            expected: self.peers.clone(),
            deadline: now + self.config.vote_timeout_ms,
            next_retransmit: now + self.config.retransmit_interval_ms,
            state: SessionState::Collecting,
            cascaded,
            opened_at: now,
        };
        let mut actions = vec![Action::OpenSession { session: id, scenario, cascaded }];
        let request = Message::request(id, self.id, scenario);
        actions.extend(self.peers.keys().map(|&to| Action::Send { to, message: request, retransmit: false }));
        self.sessions.insert(id, session);
        if self.peers.is_empty() {
            self.finalize(id, now, &mut actions);
        }
        Ok(actions)
    }

    fn finalize(&mut self, id: SessionId, now: SimTime, actions: &mut Vec<Action>) {
        let rebalance = self.config.rebalance;
        let session = self.sessions.get_mut(&id).expect("finalize on known session");
        let tally = session.tally(self.config.majority(session.scenario), rebalance);
        if !session.decide(tally.decision) {
            return;
        }
        let scenario = session.scenario;
        let voters = session.responses.len() + 1;
        self.last_own_decision.insert(scenario, now);
        self.network_decisions.insert(id, tally.decision);
        actions.push(Action::Decide {
            session: id,
            scenario,
            decision: tally.decision,
            total: tally.total,
            rebalanced: tally.rebalanced,
            voters,
        });
        let note = Message {
            session: id,
            sender: self.id,
            scenario,
            payload: Payload::Notification { decision: tally.decision, total_weighted_vote: tally.total as f32 },
        };
        actions.extend(self.peers.keys().map(|&to| Action::Send { to, message: note, retransmit: false }));
    }

    pub fn handle_message(
        &mut self,
        m: &Message,
        now: SimTime,
        sensors: &mut impl VoteSource,
    ) -> Result<Vec<Action>, ProtocolError> {
        if self.duty == DutyState::DeepSleep {
            return Err(ProtocolError::NotListening);
        }
        let mut actions = Vec::new();
        let ignore = |reason| Action::Ignore { session: m.session, from: m.sender, reason };
        if m.sender == self.id {
            actions.push(ignore(IgnoreReason::OwnMessage));
            return Ok(actions);
        }
        match m.payload {
            Payload::Request => {
                let vote = sensors.vote(m.scenario, now, self.config.node_weight);
                actions.push(Action::Send {
                    to: m.sender,
                    message: Message {
                        session: m.session,
                        sender: self.id,
                        scenario: m.scenario,
                        payload: Payload::Response {
                            raw_mean: vote.raw_mean as f32,
                            normalized: vote.normalized as f32,
                            weight: vote.weight as f32,
                        },
                    },
                    retransmit: false,
                });
                if vote.positive() && self.can_initiate(m.scenario, now) {
                    actions.extend(self.open_session(m.scenario, vote, now, true)?);
                }
            }
            Payload::Response { raw_mean, normalized, weight } => {
                let vote = Vote { raw_mean: raw_mean.into(), normalized: normalized.into(), weight: weight.into() };
                let Some(session) = self.sessions.get_mut(&m.session) else {
                    actions.push(ignore(IgnoreReason::UnknownSession));
                    return Ok(actions);
                };
                match session.record_response(m.sender, vote) {
                    RecordOutcome::Recorded => {
                        actions.push(Action::RecordResponse { session: m.session, from: m.sender, vote });
                        if session.all_responded() {
                            self.finalize(m.session, now, &mut actions);
                        }
                    }
                    RecordOutcome::AlreadyDecided => actions.push(ignore(IgnoreReason::AlreadyDecided)),
                    RecordOutcome::Duplicate => actions.push(ignore(IgnoreReason::DuplicateResponse)),
                    RecordOutcome::Unexpected => actions.push(ignore(IgnoreReason::UnexpectedSender)),
                }
            }
            Payload::Notification { decision, total_weighted_vote } => {
                self.network_decisions.insert(m.session, decision);
                let mut closed = Vec::new();
                for session in self.sessions.values_mut() {
                    if session.scenario == m.scenario && session.decide(decision) {
                        closed.push(session.id);
                    }
                }
                if !closed.is_empty() {
                    self.last_own_decision.insert(m.scenario, now);
                    for id in &closed {
                        self.network_decisions.insert(*id, decision);
                    }
                }
                actions.push(Action::NetworkDecision {
                    session: m.session,
                    scenario: m.scenario,
                    decision,
                    total: total_weighted_vote.into(),
                    closed,
                });
            }
        }
        Ok(actions)
    }

    /// Retransmits requests to silent neighbors and settles sessions whose
    /// deadline passed (rebalancing over the responders when enabled).
    pub fn on_timer(&mut self, now: SimTime) -> Vec<Action> {
        let mut actions = Vec::new();
        let due: Vec<SessionId> = self
            .sessions
            .values()
            .filter(|s| s.is_collecting() && (now >= s.deadline || now >= s.next_retransmit))
            .map(|s| s.id)
            .collect();
        for id in due {
            let interval = self.config.retransmit_interval_ms;
            let session = self.sessions.get_mut(&id).expect("due session exists");
            if now >= session.deadline {
                self.finalize(id, now, &mut actions);
            } else {
                let request = Message::request(id, self.id, session.scenario);
                actions.extend(session.missing().map(|to| Action::Send { to, message: request, retransmit: true }));
                session.next_retransmit += interval;
            }
        }
        actions
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vote(positive: bool) -> Vote {
        Vote { raw_mean: if positive { 1.0 } else { 0.0 }, normalized: if positive { 1.0 } else { 0.0 }, weight: 1.0 }
    }

    fn node(id: u16, peers: &[u16]) -> NodeProtocolState {
        let peers = peers.iter().map(|&p| (NodeId(p), 1.0)).collect();
        let mut n = NodeProtocolState::new(NodeId(id), ProtocolConfig::default(), peers).unwrap();
        n.duty_transition(0, Some(WakeReason::Timer)).unwrap();
        n
    }

    fn sends(actions: &[Action]) -> Vec<(NodeId, Message)> {
        actions
            .iter()
            .filter_map(|a| match a {
                Action::Send { to, message, .. } => Some((*to, *message)),
                _ => None,
            })
            .collect()
    }

    fn positive_sensors(_: ScenarioId, _: SimTime, w: f64) -> Vote {
        Vote { weight: w, ..vote(true) }
    }

    fn negative_sensors(_: ScenarioId, _: SimTime, w: f64) -> Vote {
        Vote { weight: w, ..vote(false) }
    }

    fn response(session: SessionId, from: u16, positive: bool) -> Message {
        Message {
            session,
            sender: NodeId(from),
            scenario: ScenarioId::Fire,
            payload: Payload::Response { raw_mean: 0.0, normalized: if positive { 1.0 } else { 0.0 }, weight: 1.0 },
        }
    }

    #[test]
    fn fan_out_to_every_neighbor() {
        let mut n = node(1, &[2, 3, 4, 5]);
        let actions = n.initiate_voting(ScenarioId::Fire, vote(true), 100).unwrap();
        let out = sends(&actions);
        assert_eq!(out.len(), 4);
        let id = SessionId { initiator: NodeId(1), seq: 0 };
        assert!(out.iter().all(|(_, m)| *m == Message::request(id, NodeId(1), ScenarioId::Fire)));
        assert_eq!(n.session(id).unwrap().deadline, 2_100);
    }

    #[test]
    fn second_detection_is_suppressed() {
        let mut n = node(1, &[2]);
        n.initiate_voting(ScenarioId::Fire, vote(true), 0).unwrap();
        assert_eq!(
            n.initiate_voting(ScenarioId::Fire, vote(true), 10),
            Err(ProtocolError::DuplicateSession { scenario: ScenarioId::Fire })
        );
        assert!(n.initiate_voting(ScenarioId::WaterLeak, vote(true), 10).is_ok());
    }

    #[test]
    fn negative_vote_cannot_initiate() {
        let mut n = node(1, &[2]);
        assert_eq!(n.initiate_voting(ScenarioId::Fire, vote(false), 0), Err(ProtocolError::NotPositive));
    }

    #[test]
    fn lone_node_decides_at_once() {
        let cfg = ProtocolConfig { node_weight: 2.5, ..Default::default() };
        let mut n = NodeProtocolState::new(NodeId(1), cfg, BTreeMap::new()).unwrap();
        let actions = n
            .initiate_voting(ScenarioId::WaterLeak, Vote { weight: 2.5, ..vote(true) }, 0)
            .unwrap();
        assert!(sends(&actions).is_empty());
        assert!(actions.iter().any(|a| matches!(a, Action::Decide { decision: true, .. })));

        let mut light = NodeProtocolState::new(NodeId(1), ProtocolConfig::default(), BTreeMap::new()).unwrap();
        let actions = light.initiate_voting(ScenarioId::WaterLeak, vote(true), 0).unwrap();
        assert!(actions.iter().any(|a| matches!(a, Action::Decide { decision: false, .. })));
    }

    #[test]
    fn request_with_positive_vote_cascades() {
        let mut n = node(2, &[1, 3]);
        let req = Message::request(SessionId { initiator: NodeId(1), seq: 4 }, NodeId(1), ScenarioId::Fire);
        let actions = n.handle_message(&req, 10, &mut positive_sensors).unwrap();
        match &actions[0] {
            Action::Send { to, message, .. } => {
                assert_eq!(*to, NodeId(1));
                assert!(matches!(message.payload, Payload::Response { normalized, .. } if normalized == 1.0));
            }
            other => panic!("expected response first, got {other:?}"),
        }
        assert!(matches!(actions[1], Action::OpenSession { cascaded: true, .. }));
        assert_eq!(sends(&actions).len(), 3);
    }

    #[test]
    fn request_with_negative_vote_only_responds() {
        let mut n = node(2, &[1, 3]);
        let req = Message::request(SessionId { initiator: NodeId(1), seq: 4 }, NodeId(1), ScenarioId::Fire);
        let actions = n.handle_message(&req, 10, &mut negative_sensors).unwrap();
        assert_eq!(actions.len(), 1);
        assert!(n.sessions().is_empty());
    }

    #[test]
    fn deep_sleep_consumes_nothing() {
        let mut n = NodeProtocolState::new(NodeId(1), ProtocolConfig::default(), BTreeMap::new()).unwrap();
        let req = Message::request(SessionId { initiator: NodeId(2), seq: 0 }, NodeId(2), ScenarioId::Fire);
        assert_eq!(n.handle_message(&req, 0, &mut positive_sensors), Err(ProtocolError::NotListening));
    }

    #[test]
    fn duplicate_and_late_responses_are_ignored() {
        let mut n = node(1, &[2, 3]);
        n.initiate_voting(ScenarioId::Fire, vote(true), 0).unwrap();
        let id = SessionId { initiator: NodeId(1), seq: 0 };
        n.handle_message(&response(id, 2, true), 5, &mut positive_sensors).unwrap();
        let again = n.handle_message(&response(id, 2, false), 6, &mut positive_sensors).unwrap();
        assert!(matches!(again[0], Action::Ignore { reason: IgnoreReason::DuplicateResponse, .. }));
        assert_eq!(n.session(id).unwrap().responses.len(), 1);

        let done = n.handle_message(&response(id, 3, true), 7, &mut positive_sensors).unwrap();
        assert!(done.iter().any(|a| matches!(a, Action::Decide { decision: true, total, .. } if *total == 3.0)));
        let before = n.session(id).unwrap().clone();
        let late = n.handle_message(&response(id, 3, false), 8, &mut positive_sensors).unwrap();
        assert!(matches!(late[0], Action::Ignore { reason: IgnoreReason::AlreadyDecided, .. }));
        assert_eq!(n.session(id).unwrap(), &before);

        let unknown = SessionId { initiator: NodeId(1), seq: 99 };
        let u = n.handle_message(&response(unknown, 2, true), 9, &mut positive_sensors).unwrap();
        assert!(matches!(u[0], Action::Ignore { reason: IgnoreReason::UnknownSession, .. }));
    }

    #[test]
    fn complete_session_notifies_without_retransmitting() {
        let mut n = node(1, &[2, 3]);
        n.initiate_voting(ScenarioId::Fire, vote(true), 0).unwrap();
        let id = SessionId { initiator: NodeId(1), seq: 0 };
        n.handle_message(&response(id, 2, true), 5, &mut positive_sensors).unwrap();
        let actions = n.handle_message(&response(id, 3, false), 6, &mut positive_sensors).unwrap();
        let notes: Vec<_> = sends(&actions)
            .into_iter()
            .filter(|(_, m)| matches!(m.payload, Payload::Notification { decision: false, .. }))
            .collect();
        assert_eq!(notes.len(), 2);
        assert_eq!(n.next_timer(), None);
        assert!(n.on_timer(500).is_empty());
    }

    #[test]
    fn silent_neighbor_gets_three_retransmissions() {
        let mut n = node(1, &[2, 3]);
        n.initiate_voting(ScenarioId::Fire, vote(true), 0).unwrap();
        let id = SessionId { initiator: NodeId(1), seq: 0 };
        n.handle_message(&response(id, 2, true), 3, &mut positive_sensors).unwrap();
        let mut retransmits = 0;
        let mut decided = None;
        while let Some(t) = n.next_timer() {
            for a in n.on_timer(t) {
                match a {
                    Action::Send { to, retransmit: true, .. } => {
                        assert_eq!(to, NodeId(3));
                        retransmits += 1;
                    }
                    Action::Decide { decision, total, rebalanced, .. } => decided = Some((t, decision, total, rebalanced)),
                    _ => {}
                }
            }
        }
        assert_eq!(retransmits, 3);
        // own + node 2 positive, rescaled from 2 of 3 weights: 2 * 3/2 = 3
        assert_eq!(decided, Some((2_000, true, 3.0, true)));
    }

    #[test]
    fn one_silent_of_four_rebalances() {
        let mut n = node(1, &[2, 3, 4, 5]);
        n.initiate_voting(ScenarioId::Fire, vote(true), 0).unwrap();
        let id = SessionId { initiator: NodeId(1), seq: 0 };
        n.handle_message(&response(id, 2, true), 3, &mut positive_sensors).unwrap();
        n.handle_message(&response(id, 3, false), 3, &mut positive_sensors).unwrap();
        n.handle_message(&response(id, 4, false), 3, &mut positive_sensors).unwrap();
        let actions = n.on_timer(2_000);
        // 2 positive of 4 responders, scaled by 5/4: total 2.5
        assert!(actions.iter().any(|a| matches!(a, Action::Decide { decision: true, total, rebalanced: true, .. } if *total == 2.5)));
        assert_eq!(sends(&actions).len(), 4);
    }

    #[test]
    fn notification_closes_local_session() {
        let mut n = node(2, &[1, 3]);
        n.initiate_voting(ScenarioId::Fire, vote(true), 0).unwrap();
        let foreign = SessionId { initiator: NodeId(1), seq: 0 };
        let note = Message {
            session: foreign,
            sender: NodeId(1),
            scenario: ScenarioId::Fire,
            payload: Payload::Notification { decision: true, total_weighted_vote: 3.0 },
        };
        let actions = n.handle_message(&note, 50, &mut positive_sensors).unwrap();
        let own = SessionId { initiator: NodeId(2), seq: 0 };
        assert_eq!(
            actions,
            vec![Action::NetworkDecision { session: foreign, scenario: ScenarioId::Fire, decision: true, total: 3.0, closed: vec![own] }]
        );
        assert!(n.network_decisions()[&foreign]);
        assert_eq!(n.session(own).unwrap().decision(), Some(true));
        assert!(!n.can_initiate(ScenarioId::Fire, 51));
        assert!(n.can_initiate(ScenarioId::Fire, 50 + 60_000));
    }

    #[test]
    fn duty_transitions() {
        let cfg = ProtocolConfig::default();
        let mut n = NodeProtocolState::new(NodeId(1), cfg, BTreeMap::new()).unwrap();
        assert_eq!(n.duty_transition(60_000, Some(WakeReason::Timer)), Ok(DutyState::IdleUptime));
        assert!(n.duty_transition(61_000, None).is_err());
        assert_eq!(n.duty_transition(65_000, None), Ok(DutyState::DeepSleep));
        assert_eq!(
            n.duty_transition(70_000, Some(WakeReason::SensorThreshold(ScenarioId::Fire))),
            Ok(DutyState::ActiveUptime)
        );
        assert_eq!(n.wake_reason(), Some(WakeReason::SensorThreshold(ScenarioId::Fire)));
        assert_eq!(n.duty_transition(70_001, None), Ok(DutyState::DeepSleep));
        assert!(matches!(
            n.duty_transition(70_002, Some(WakeReason::ExternalMessage)),
            Err(ProtocolError::IllegalTransition { from: DutyState::DeepSleep, .. })
        ));
        assert!(n.duty_transition(70_002, None).is_err());
    }

    #[test]
    fn active_with_open_session_cannot_sleep() {
        let mut n = node(1, &[2]);
        n.duty_transition(1, Some(WakeReason::SensorThreshold(ScenarioId::Fire))).unwrap();
        n.initiate_voting(ScenarioId::Fire, vote(true), 1).unwrap();
        assert!(n.duty_transition(100_000, None).is_err());
    }

    #[test]
    fn seq_is_monotonic_across_sessions() {
        let cfg = ProtocolConfig { seq_counter: 41, retrigger_holdoff_ms: 0, ..Default::default() };
        let mut n = NodeProtocolState::new(NodeId(1), cfg, [(NodeId(2), 1.0)].into()).unwrap();
        n.duty_transition(0, Some(WakeReason::Timer)).unwrap();
        n.initiate_voting(ScenarioId::Fire, vote(true), 0).unwrap();
        n.on_timer(2_000);
        n.initiate_voting(ScenarioId::Fire, vote(true), 3_000).unwrap();
        let seqs: Vec<u32> = n.sessions().keys().map(|s| s.seq).collect();
        assert_eq!(seqs, vec![41, 42]);
    }

    #[test]
    fn rejects_self_peer() {
        let peers = [(NodeId(1), 1.0)].into();
        assert!(NodeProtocolState::new(NodeId(1), ProtocolConfig::default(), peers).is_err());
    }
}
