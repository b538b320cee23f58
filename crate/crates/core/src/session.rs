use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::message::{NodeId, ScenarioId, SessionId};
use crate::vote::{rebalance_weights, MajorityRule, Vote};
use crate::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SessionState {
    Collecting,
    Decided(bool),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordOutcome {
    Recorded,
    Duplicate,
    Unexpected,
    AlreadyDecided,
}

/// Result of tallying a session.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tally {
    pub total: f64,
    pub decision: bool,
    pub rebalanced: bool,
}

/// One voting session owned by its initiator.
#[derive(Debug, Clone, PartialEq)]
pub struct VotingSession {
    pub id: SessionId,
    pub scenario: ScenarioId,
    pub own_vote: Vote,
    pub responses: BTreeMap<NodeId, Vote>,
    /// Known neighbors and their nominal weights.
    pub expected: BTreeMap<NodeId, f64>,
    pub deadline: SimTime,
    pub next_retransmit: SimTime,
    pub state: SessionState,
    pub cascaded: bool,
    pub opened_at: SimTime,
}

impl VotingSession {
    pub fn initiator(&self) -> NodeId {
        self.id.initiator
    }

    pub fn is_collecting(&self) -> bool {
        self.state == SessionState::Collecting
    }

    pub fn record_response(&mut self, from: NodeId, vote: Vote) -> RecordOutcome {
        if !self.is_collecting() {
            return RecordOutcome::AlreadyDecided;
        }
        if !self.expected.contains_key(&from) {
            return RecordOutcome::Unexpected;
        }
        if self.responses.contains_key(&from) {
            return RecordOutcome::Duplicate;
        }
        self.responses.insert(from, vote);
        RecordOutcome::Recorded
    }

    pub fn all_responded(&self) -> bool {
        self.responses.len() == self.expected.len()
    }

    pub fn missing(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.expected.keys().copied().filter(|id| !self.responses.contains_key(id))
    }

    /// Weighted total over the own vote and all responses.
    ///
    /// With `rebalance` set and at least one expected node missing, the
    /// weights of the responders (self included) are first rescaled to the
    /// full network weight.
    pub fn tally(&self, rule: MajorityRule, rebalance: bool) -> Tally {
        let rebalanced = rebalance && !self.all_responded();
        let total = if rebalanced {
            let mut all: BTreeMap<NodeId, f64> = self.expected.clone();
            for (id, vote) in &self.responses {
                all.insert(*id, vote.weight);
            }
            all.insert(self.initiator(), self.own_vote.weight);
            let responding: BTreeSet<NodeId> =
                self.responses.keys().copied().chain(std::iter::once(self.initiator())).collect();
            // responding always holds the initiator, so this cannot fail
            let scaled = rebalance_weights(&all, &responding).expect("initiator is always a respondent");
            let normalized = |id: &NodeId| {
                if *id == self.initiator() {
                    self.own_vote.normalized
                } else {
                    self.responses[id].normalized
                }
            };
            scaled.iter().map(|(id, w)| normalized(id) * w).sum()
        } else {
            self.own_vote.weighted() + self.responses.values().map(Vote::weighted).sum::<f64>()
        };
        Tally { total, decision: rule.accepts(total), rebalanced }
    }

    /// Moves the session to `Decided`. Returns false if it already was.
    pub fn decide(&mut self, decision: bool) -> bool {
        if self.is_collecting() {
            self.state = SessionState::Decided(decision);
            true
        } else {
            false
        }
    }

    pub fn decision(&self) -> Option<bool> {
        match self.state {
            SessionState::Decided(d) => Some(d),
            SessionState::Collecting => None,
        }
    }
}
