//! The event loop.
//!
//! Each node runs a [`NodeProtocolState`] fed by this loop. Radio traffic
//! goes through the topology's links; sensors read the [`Environment`].
//! Every node samples its sensors once per window regardless of duty state
//! (the low-power coprocessor keeps watching during deep sleep), but only
//! an awake node receives radio messages.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use vigil_core::detection::{calibrate_gas, temp_gradient, Detector, SensorKind, SensorWindow, ThresholdSet, CALIBRATION_SAMPLES};
use vigil_core::power::{record_stage, EnergyLedger, NodeEnergy, Stage, StageProfile};
use vigil_core::{
    compute_vote, decode_message, encode_message, Action, DutyState, Message, NodeId, NodeProtocolState, ProtocolConfig,
    ScenarioId, SessionId, SimTime, Vote, WakeReason,
};

use crate::environment::Environment;
use crate::error::SimError;
use crate::log::LogRecord;
use crate::queue::EventQueue;
use crate::script::{Stimulus, StimulusScript};
use crate::topology::Topology;
use crate::trace::TraceSet;

/// Per-node configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NodeSetup {
    pub protocol: ProtocolConfig,
    pub thresholds: ThresholdSet,
    pub boot_at_ms: SimTime,
    /// Gas sensor warm-up inside the setup stage; calibration samples are
    /// spread over the rest of it.
    pub preheat_ms: SimTime,
}

impl Default for NodeSetup {
    fn default() -> Self {
        Self { protocol: ProtocolConfig::default(), thresholds: ThresholdSet::default(), boot_at_ms: 0, preheat_ms: 5_000 }
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub topology: Topology,
    pub nodes: BTreeMap<NodeId, NodeSetup>,
    pub profile: StageProfile,
    pub script: StimulusScript,
    pub traces: TraceSet,
    /// Gaussian noise sigma per analog channel.
    pub noise: BTreeMap<SensorKind, f64>,
    pub seed: u64,
    pub end_ms: SimTime,
    /// Keep the full event log. Counters and summaries are kept either way.
    pub record_log: bool,
}

impl SimConfig {
    /// Every topology node with the same setup.
    pub fn uniform(topology: Topology, setup: NodeSetup, script: StimulusScript, seed: u64, end_ms: SimTime) -> Self {
        let nodes = topology.node_ids().map(|id| (id, setup.clone())).collect();
        Self {
            topology,
            nodes,
            profile: StageProfile::default(),
            script,
            traces: TraceSet::builtin(),
            noise: BTreeMap::new(),
            seed,
            end_ms,
            record_log: true,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |s: String| Err(SimError::ConfigInvalid(s));
        let topo: BTreeSet<NodeId> = self.topology.node_ids().collect();
        let conf: BTreeSet<NodeId> = self.nodes.keys().copied().collect();
        if topo != conf {
            return bad(format!("node setups {conf:?} do not match topology nodes {topo:?}"));
        }
        if topo.is_empty() {
            return bad("at least one node is required".into());
        }
        for (id, setup) in &self.nodes {
            setup.protocol.validate().map_err(|source| SimError::Protocol { node: *id, source })?;
            setup.thresholds.validate().map_err(|e| SimError::ConfigInvalid(format!("node {id} thresholds: {e}")))?;
            if setup.preheat_ms >= setup.protocol.setup_ms {
                return bad(format!("node {id}: preheat_ms must be shorter than setup_ms"));
            }
        }
        self.profile.validate().map_err(|e| SimError::ConfigInvalid(e.to_string()))?;
        self.script.validate().map_err(SimError::ConfigInvalid)?;
        for e in self.script.entries() {
            for n in e.stimulus.nodes() {
                if !topo.contains(&n) {
                    return bad(format!("{} at {} ms names unknown node {n}", e.stimulus.name(), e.at_ms));
                }
            }
        }
        for (kind, sigma) in &self.noise {
            if !(sigma.is_finite() && *sigma >= 0.0) {
                return bad(format!("noise for {} must be >= 0", kind.as_str()));
            }
        }
        Ok(())
    }
}

#[derive(Debug)]
enum Event {
    Stimulus(usize),
    Boot { node: NodeId, epoch: u64 },
    BootComplete { node: NodeId, epoch: u64 },
    SenseTick { node: NodeId, epoch: u64 },
    SleepWake { node: NodeId, token: u64 },
    UptimeExpire { node: NodeId, epoch: u64 },
    ProtocolTimer { node: NodeId, epoch: u64, at: SimTime },
    Deliver { from: NodeId, to: NodeId, bytes: Vec<u8> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Off,
    Booting,
    Running,
}

#[derive(Debug)]
struct SimNode {
    setup: NodeSetup,
    peers: BTreeMap<NodeId, f64>,
    detector: Detector,
    phase: Phase,
    proto: Option<NodeProtocolState>,
    epoch: u64,
    sleep_token: u64,
    /// Start of the interval not yet charged to the energy ledger.
    mark: SimTime,
    next_seq: u32,
    pending_timers: BTreeSet<SimTime>,
}

impl SimNode {
    fn proto(&self) -> Option<&NodeProtocolState> {
        self.proto.as_ref().filter(|_| self.phase == Phase::Running)
    }
}

/// One session as seen by its initiator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionRecord {
    pub session: SessionId,
    pub scenario: ScenarioId,
    pub cascaded: bool,
    pub opened_at: SimTime,
    pub decided_at: SimTime,
    pub decision: bool,
    pub total: f64,
    pub rebalanced: bool,
    pub voters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NotificationRecord {
    pub time_ms: SimTime,
    pub node: NodeId,
    pub session: SessionId,
    pub scenario: ScenarioId,
    pub decision: bool,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionRecord {
    pub time_ms: SimTime,
    pub node: NodeId,
    pub scenario: ScenarioId,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MessageCounters {
    pub sent: u64,
    pub retransmissions: u64,
    pub sent_by_kind: BTreeMap<String, u64>,
    pub delivered: u64,
    pub dropped: BTreeMap<String, u64>,
    /// Still on the air when the run ended.
    pub in_flight: u64,
}

impl MessageCounters {
    pub fn dropped_total(&self) -> u64 {
        self.dropped.values().sum()
    }

    /// Every sent message was delivered, dropped or is still in flight.
    pub fn balanced(&self) -> bool {
        self.sent == self.delivered + self.dropped_total() + self.in_flight
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioOutcome {
    pub occurred_at: Option<SimTime>,
    pub accepted: bool,
    pub first_accept_ms: Option<SimTime>,
    pub latency_ms: Option<SimTime>,
    pub false_positive: bool,
    pub false_negative: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub seed: u64,
    pub end_ms: SimTime,
    pub log: Vec<LogRecord>,
    pub sessions: Vec<SessionRecord>,
    pub notifications: Vec<NotificationRecord>,
    pub detections: Vec<DetectionRecord>,
    pub counters: MessageCounters,
    pub energy: EnergyLedger,
    pub sensor_extremes: BTreeMap<SensorKind, (f64, f64)>,
    pub ground_truth: Vec<(ScenarioId, SimTime)>,
}

impl RunOutput {
    pub fn accepted(&self, scenario: ScenarioId) -> bool {
        self.sessions.iter().any(|s| s.scenario == scenario && s.decision)
    }

    pub fn first_accept(&self, scenario: ScenarioId) -> Option<SimTime> {
        self.sessions.iter().filter(|s| s.scenario == scenario && s.decision).map(|s| s.decided_at).min()
    }

    pub fn first_detection(&self, scenario: ScenarioId) -> Option<SimTime> {
        self.detections.iter().filter(|d| d.scenario == scenario).map(|d| d.time_ms).min()
    }

    pub fn sessions_for(&self, scenario: ScenarioId) -> impl Iterator<Item = &SessionRecord> {
        self.sessions.iter().filter(move |s| s.scenario == scenario)
    }

    pub fn node_energy(&self, id: NodeId) -> NodeEnergy {
        self.energy.node(id).cloned().unwrap_or_default()
    }

    pub fn outcomes(&self) -> BTreeMap<ScenarioId, ScenarioOutcome> {
        ScenarioId::ALL
            .into_iter()
            .map(|s| {
                let occurred_at = self.ground_truth.iter().find(|(x, _)| *x == s).map(|(_, t)| *t);
                let first_accept_ms = self.first_accept(s);
                let accepted = first_accept_ms.is_some();
                let latency_ms = match (occurred_at, first_accept_ms) {
                    (Some(a), Some(b)) => Some(b.saturating_sub(a)),
                    _ => None,
                };
                let o = ScenarioOutcome {
                    occurred_at,
                    accepted,
                    first_accept_ms,
                    latency_ms,
                    false_positive: accepted && occurred_at.is_none(),
                    false_negative: !accepted && occurred_at.is_some(),
                };
                (s, o)
            })
            .collect()
    }
}

pub struct Simulation {
    topology: Topology,
    profile: StageProfile,
    script: StimulusScript,
    env: Environment,
    seed: u64,
    end_ms: SimTime,
    record_log: bool,
    rng: ChaCha8Rng,
    queue: EventQueue<Event>,
    nodes: BTreeMap<NodeId, SimNode>,
    log: Vec<LogRecord>,
    opened: BTreeMap<SessionId, (SimTime, bool)>,
    sessions: Vec<SessionRecord>,
    notifications: Vec<NotificationRecord>,
    detections: Vec<DetectionRecord>,
    counters: MessageCounters,
    energy: EnergyLedger,
    extremes: BTreeMap<SensorKind, (f64, f64)>,
}

pub fn run(config: &SimConfig) -> Result<RunOutput, SimError> {
    Simulation::new(config)?.run()
}

impl Simulation {
    pub fn new(config: &SimConfig) -> Result<Self, SimError> {
        config.validate()?;
        let mut env = Environment::from_script(&config.script, &config.traces);
        for (kind, sigma) in &config.noise {
            env.set_noise(*kind, *sigma);
        }
        let nodes = config
            .nodes
            .iter()
            .map(|(&id, setup)| {
                let peers = config
                    .topology
                    .neighbors(id)
                    .into_iter()
                    .map(|p| (p, config.nodes[&p].protocol.node_weight))
                    .collect();
                let node = SimNode {
                    setup: setup.clone(),
                    peers,
                    detector: Detector::new(setup.thresholds),
                    phase: Phase::Off,
                    proto: None,
                    epoch: 0,
                    sleep_token: 0,
                    mark: 0,
                    next_seq: setup.protocol.seq_counter,
                    pending_timers: BTreeSet::new(),
                };
                (id, node)
            })
            .collect();
        let mut sim = Self {
            topology: config.topology.clone(),
            profile: config.profile,
            script: config.script.clone(),
            env,
            seed: config.seed,
            end_ms: config.end_ms,
            record_log: config.record_log,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            queue: EventQueue::default(),
            nodes,
            log: Vec::new(),
            opened: BTreeMap::new(),
            sessions: Vec::new(),
            notifications: Vec::new(),
            detections: Vec::new(),
            counters: MessageCounters::default(),
            energy: EnergyLedger::default(),
            extremes: BTreeMap::new(),
        };
        for (i, e) in config.script.entries().iter().enumerate() {
            sim.queue.push(e.at_ms, Event::Stimulus(i));
        }
        for (&id, setup) in &config.nodes {
            sim.queue.push(setup.boot_at_ms, Event::Boot { node: id, epoch: 0 });
        }
        Ok(sim)
    }

    /// Puts raw bytes on the air from `from` to `to` at `at`, bypassing the
    /// protocol and the link's loss draw.
    pub fn inject(&mut self, at: SimTime, from: NodeId, to: NodeId, bytes: Vec<u8>) {
        self.counters.sent += 1;
        *self.counters.sent_by_kind.entry("raw".into()).or_default() += 1;
        self.queue.push(at, Event::Deliver { from, to, bytes });
    }

    pub fn run(mut self) -> Result<RunOutput, SimError> {
        while let Some(t) = self.queue.peek_time() {
            if t > self.end_ms {
                break;
            }
            let (now, event) = self.queue.pop().expect("peeked");
            self.dispatch(now, event)?;
        }
        let end = self.end_ms;
        let ids: Vec<NodeId> = self.nodes.keys().copied().collect();
        for id in ids {
            self.account(id, end);
        }
        self.counters.in_flight = self.queue.drain().filter(|(_, e)| matches!(e, Event::Deliver { .. })).count() as u64;
        Ok(RunOutput {
            seed: self.seed,
            end_ms: self.end_ms,
            log: self.log,
            sessions: self.sessions,
            notifications: self.notifications,
            detections: self.detections,
            counters: self.counters,
            energy: self.energy,
            sensor_extremes: self.extremes,
            ground_truth: self.script.ground_truth(),
        })
    }

    fn record(&mut self, time_ms: SimTime, node: Option<NodeId>, event: &str, details: serde_json::Value) {
        if self.record_log {
            self.log.push(LogRecord { time_ms, node, event: event.to_string(), details });
        }
    }

    fn node(&self, id: NodeId) -> &SimNode {
        &self.nodes[&id]
    }

    fn node_mut(&mut self, id: NodeId) -> &mut SimNode {
        self.nodes.get_mut(&id).expect("node exists")
    }

    fn alive(&self, id: NodeId, epoch: u64) -> bool {
        let n = self.node(id);
        n.epoch == epoch && n.phase != Phase::Off
    }

    fn dispatch(&mut self, now: SimTime, event: Event) -> Result<(), SimError> {
        match event {
            Event::Stimulus(i) => self.on_stimulus(now, i),
            Event::Boot { node, epoch } => {
                if self.node(node).epoch == epoch {
                    self.boot(node, now);
                }
                Ok(())
            }
            Event::BootComplete { node, epoch } => {
                if self.alive(node, epoch) {
                    self.boot_complete(node, now)?;
                }
                Ok(())
            }
            Event::SenseTick { node, epoch } => {
                if self.alive(node, epoch) {
                    self.sense(node, now)?;
                    self.try_sleep(node, now)?;
                }
                Ok(())
            }
            Event::SleepWake { node, token } => {
                let n = self.node(node);
                let asleep = n.proto().is_some_and(|p| p.duty() == DutyState::DeepSleep);
                if n.sleep_token == token && asleep {
                    self.transition(node, now, Some(WakeReason::Timer))?;
                }
                Ok(())
            }
            Event::UptimeExpire { node, epoch } => {
                if self.alive(node, epoch) {
                    self.try_sleep(node, now)?;
                }
                Ok(())
            }
            Event::ProtocolTimer { node, epoch, at } => {
                self.node_mut(node).pending_timers.remove(&at);
                if !self.alive(node, epoch) {
                    return Ok(());
                }
                let due = self.node(node).proto().and_then(NodeProtocolState::next_timer).is_some_and(|t| t <= now);
                if due {
                    let actions = self.node_mut(node).proto.as_mut().expect("running").on_timer(now);
                    self.process(node, actions, now)?;
                }
                self.schedule_timer(node, now);
                self.try_sleep(node, now)
            }
            Event::Deliver { from, to, bytes } => self.deliver(now, from, to, bytes),
        }
    }

    fn on_stimulus(&mut self, now: SimTime, index: usize) -> Result<(), SimError> {
        let stimulus = self.script.entries()[index].stimulus.clone();
        self.record(now, None, "stimulus", serde_json::to_value(&stimulus).expect("stimulus serializes"));
        match stimulus {
            Stimulus::NodeOff { node } => {
                if self.node(node).phase != Phase::Off {
                    self.account(node, now);
                    let n = self.node_mut(node);
                    if let Some(p) = n.proto.take() {
                        n.next_seq = p.next_seq();
                    }
                    n.phase = Phase::Off;
                    n.epoch += 1;
                    n.pending_timers.clear();
                    self.record(now, Some(node), "node_off", json!({}));
                }
            }
            Stimulus::NodeOn { node } => {
                if self.node(node).phase == Phase::Off {
                    let n = self.node_mut(node);
                    n.epoch += 1;
                    self.boot(node, now);
                }
            }
            Stimulus::ArmIntrusion | Stimulus::DisarmIntrusion => {
                let armed = matches!(stimulus, Stimulus::ArmIntrusion);
                for n in self.nodes.values_mut() {
                    n.detector.armed = armed;
                }
            }
            Stimulus::SetLoss { from, to, loss_prob, symmetric } => {
                self.topology.link_mut(from, to)?.loss_prob = loss_prob;
                if symmetric {
                    self.topology.link_mut(to, from)?.loss_prob = loss_prob;
                }
            }
            // folded into the environment up front
            _ => {}
        }
        Ok(())
    }

    fn boot(&mut self, id: NodeId, now: SimTime) {
        let n = self.nodes.get_mut(&id).expect("node exists");
        n.phase = Phase::Booting;
        n.mark = now;
        n.detector.calibration = None;
        let (epoch, setup_ms) = (n.epoch, n.setup.protocol.setup_ms);
        self.record(now, Some(id), "boot", json!({ "epoch": epoch }));
        self.queue.push(now + setup_ms, Event::BootComplete { node: id, epoch });
    }

    fn boot_complete(&mut self, id: NodeId, now: SimTime) -> Result<(), SimError> {
        self.account(id, now);
        let n = self.node(id);
        let setup = n.setup.clone();
        let start = now - setup.protocol.setup_ms;
        let span = setup.protocol.setup_ms - setup.preheat_ms;
        let mut co = Vec::with_capacity(CALIBRATION_SAMPLES);
        let mut odor = Vec::with_capacity(CALIBRATION_SAMPLES);
        for i in 0..CALIBRATION_SAMPLES as u64 {
            let t = start + setup.preheat_ms + i * span / CALIBRATION_SAMPLES as u64;
            co.push(self.env.sample(id, SensorKind::Co, t, &mut self.rng)?);
            odor.push(self.env.sample(id, SensorKind::OdorGas, t, &mut self.rng)?);
        }
        let cal = calibrate_gas(&co, &odor, setup.preheat_ms as f64 / 1000.0)
            .map_err(|source| SimError::Calibration { node: id, source })?;
        self.record(now, Some(id), "calibrate", json!({ "baseline_co": cal.baseline_co, "baseline_odor": cal.baseline_odor }));
        let n = self.node_mut(id);
        n.detector.calibration = Some(cal);
        let protocol = ProtocolConfig { seq_counter: n.next_seq, ..setup.protocol.clone() };
        n.proto = Some(NodeProtocolState::new(id, protocol, n.peers.clone()).map_err(|source| SimError::Protocol { node: id, source })?);
        n.phase = Phase::Running;
        let epoch = n.epoch;
        // the end of setup opens the first uptime
        self.transition(id, now, Some(WakeReason::Timer))?;
        self.queue.push(now + setup.protocol.sample_window_ms, Event::SenseTick { node: id, epoch });
        Ok(())
    }

    /// Charges the ledger for the time since the node's last mark.
    fn account(&mut self, id: NodeId, now: SimTime) {
        let profile = self.profile;
        let n = self.nodes.get_mut(&id).expect("node exists");
        let from = n.mark;
        n.mark = now;
        if now <= from {
            return;
        }
        let secs = |ms: SimTime| ms as f64 / 1000.0;
        let mut charge = |stage, ms| {
            if ms > 0 {
                record_stage(&mut self.energy, id, stage, secs(ms), &profile);
            }
        };
        match n.phase {
            Phase::Off => {}
            Phase::Booting => charge(Stage::Setup, now - from),
            Phase::Running => {
                let p = n.proto.as_ref().expect("running node has protocol state");
                match (p.duty(), p.uptime_since()) {
                    (DutyState::DeepSleep, _) => charge(Stage::DeepSleep, now - from),
                    (duty, since) => {
                        let since = since.unwrap_or(from);
                        let peak_end = since + (profile.peak_s * 1000.0).round() as SimTime;
                        let peak = peak_end.min(now).saturating_sub(from.max(since));
                        charge(Stage::RadioPeak, peak);
                        let rest = if duty == DutyState::ActiveUptime { Stage::Active } else { Stage::Listen };
                        charge(rest, now - from - peak);
                    }
                }
            }
        }
    }

    fn transition(&mut self, id: NodeId, now: SimTime, reason: Option<WakeReason>) -> Result<DutyState, SimError> {
        self.account(id, now);
        let n = self.nodes.get_mut(&id).expect("node exists");
        let p = n.proto.as_mut().expect("running node has protocol state");
        let before = p.duty();
        let after = p.duty_transition(now, reason).map_err(|source| SimError::Protocol { node: id, source })?;
        let (epoch, sleep_ms, listen_ms) = (n.epoch, p.config().sleep_interval_ms, p.config().idle_listen_ms);
        if before == after {
            return Ok(after);
        }
        if after == DutyState::DeepSleep {
            n.sleep_token += 1;
            let token = n.sleep_token;
            self.queue.push(now + sleep_ms, Event::SleepWake { node: id, token });
        } else if before == DutyState::DeepSleep {
            n.sleep_token += 1;
            self.queue.push(now + listen_ms, Event::UptimeExpire { node: id, epoch });
        }
        let reason = match reason {
            None => "none".to_string(),
            Some(WakeReason::Timer) => "timer".into(),
            Some(WakeReason::ExternalMessage) => "message".into(),
            Some(WakeReason::SensorThreshold(s)) => format!("sensor:{s}"),
        };
        self.record(now, Some(id), "duty", json!({ "from": format!("{before:?}"), "to": format!("{after:?}"), "reason": reason }));
        Ok(after)
    }

    fn try_sleep(&mut self, id: NodeId, now: SimTime) -> Result<(), SimError> {
        let ready = self.node(id).proto().is_some_and(|p| {
            p.duty() != DutyState::DeepSleep
                && !p.has_collecting()
                && p.uptime_since().is_some_and(|s| now >= s + p.config().idle_listen_ms)
        });
        if ready {
            self.transition(id, now, None)?;
        }
        Ok(())
    }

    fn sense(&mut self, id: NodeId, now: SimTime) -> Result<(), SimError> {
        let n = self.node(id);
        let (protocol, thresholds, epoch) = (n.setup.protocol.clone(), n.setup.thresholds, n.epoch);
        let window = sample_window(&self.env, &mut self.rng, &mut self.extremes, id, now, &protocol, &thresholds)?;
        let detector = self.node(id).detector.clone();
        for scenario in detector.triggered(&window) {
            let can = self.node(id).proto().is_some_and(|p| p.can_initiate(scenario, now));
            if !can {
                continue;
            }
            let samples = detector.primary_samples(scenario, &window);
            let positive = detector.vote_predicate(scenario, &window);
            let Ok(vote) = compute_vote(&samples, |_| positive, protocol.node_weight) else { continue };
            if !vote.positive() {
                continue;
            }
            self.detections.push(DetectionRecord { time_ms: now, node: id, scenario });
            self.record(now, Some(id), "detect", json!({ "scenario": scenario, "raw_mean": vote.raw_mean }));
            let duty = self.node(id).proto().expect("running").duty();
            if duty != DutyState::ActiveUptime {
                self.transition(id, now, Some(WakeReason::SensorThreshold(scenario)))?;
            }
            let actions = self
                .node_mut(id)
                .proto
                .as_mut()
                .expect("running")
                .initiate_voting(scenario, vote, now)
                .map_err(|source| SimError::Protocol { node: id, source })?;
            self.process(id, actions, now)?;
        }
        self.queue.push(now + protocol.sample_window_ms, Event::SenseTick { node: id, epoch });
        Ok(())
    }

    fn deliver(&mut self, now: SimTime, from: NodeId, to: NodeId, bytes: Vec<u8>) -> Result<(), SimError> {
        let n = self.node(to);
        let reason = match (n.phase, n.proto().map(NodeProtocolState::duty)) {
            (Phase::Off, _) => Some("failed"),
            (Phase::Booting, _) => Some("booting"),
            (_, Some(DutyState::DeepSleep)) => Some("asleep"),
            _ => None,
        };
        let message = match reason {
            Some(r) => {
                self.drop_message(now, from, to, &bytes, r);
                return Ok(());
            }
            None => match decode_message(&bytes) {
                Ok(m) => m,
                Err(e) => {
                    self.drop_message(now, from, to, &bytes, "malformed");
                    self.record(now, Some(to), "malformed", json!({ "error": e.to_string() }));
                    return Ok(());
                }
            },
        };
        self.counters.delivered += 1;
        self.record(
            now,
            Some(to),
            "deliver",
            json!({ "from": from, "kind": message.kind().as_str(), "session": message.session.to_string(), "scenario": message.scenario }),
        );
        if self.node(to).proto().expect("running").duty() == DutyState::IdleUptime {
            self.transition(to, now, Some(WakeReason::ExternalMessage))?;
        }
        let Simulation { nodes, env, rng, extremes, .. } = self;
        let node = nodes.get_mut(&to).expect("node exists");
        let detector = node.detector.clone();
        let (protocol, thresholds) = (node.setup.protocol.clone(), node.setup.thresholds);
        let mut failure = None;
        let mut source = |scenario: ScenarioId, t: SimTime, weight: f64| -> Vote {
            let negative = Vote { raw_mean: 0.0, normalized: 0.0, weight };
            match sample_window(env, rng, extremes, to, t, &protocol, &thresholds) {
                Ok(w) => {
                    let positive = detector.vote_predicate(scenario, &w);
                    compute_vote(&detector.primary_samples(scenario, &w), |_| positive, weight).unwrap_or(negative)
                }
                Err(e) => {
                    failure = Some(e);
                    negative
                }
            }
        };
        let actions = node
            .proto
            .as_mut()
            .expect("running")
            .handle_message(&message, now, &mut source)
            .map_err(|source| SimError::Protocol { node: to, source })?;
        if let Some(e) = failure {
            return Err(e);
        }
        self.process(to, actions, now)?;
        self.try_sleep(to, now)
    }

    fn drop_message(&mut self, now: SimTime, from: NodeId, to: NodeId, bytes: &[u8], reason: &str) {
        *self.counters.dropped.entry(reason.to_string()).or_default() += 1;
        let kind = decode_message(bytes).map(|m| m.kind().as_str()).unwrap_or("raw");
        self.record(now, Some(to), "drop", json!({ "from": from, "kind": kind, "reason": reason }));
    }

    fn transmit(&mut self, now: SimTime, from: NodeId, to: NodeId, message: &Message, retransmit: bool) -> Result<(), SimError> {
        let link = *self.topology.link(from, to)?;
        let bytes = encode_message(message);
        self.counters.sent += 1;
        if retransmit {
            self.counters.retransmissions += 1;
        }
        *self.counters.sent_by_kind.entry(message.kind().as_str().into()).or_default() += 1;
        self.record(
            now,
            Some(from),
            "send",
            json!({
                "to": to,
                "kind": message.kind().as_str(),
                "session": message.session.to_string(),
                "scenario": message.scenario,
                "retransmit": retransmit,
                "bytes": bytes.len(),
            }),
        );
        if self.rng.random_bool(link.loss_prob) {
            self.drop_message(now, from, to, &bytes, "loss");
        } else {
            self.queue.push(now + link.latency_ms, Event::Deliver { from, to, bytes });
        }
        Ok(())
    }

    fn process(&mut self, id: NodeId, actions: Vec<Action>, now: SimTime) -> Result<(), SimError> {
        for action in actions {
            match action {
                Action::Send { to, message, retransmit } => self.transmit(now, id, to, &message, retransmit)?,
                Action::OpenSession { session, scenario, cascaded } => {
                    self.opened.insert(session, (now, cascaded));
                    self.record(now, Some(id), "open", json!({ "session": session.to_string(), "scenario": scenario, "cascaded": cascaded }));
                }
                Action::RecordResponse { session, from, vote } => {
                    self.record(
                        now,
                        Some(id),
                        "response",
                        json!({ "session": session.to_string(), "from": from, "normalized": vote.normalized, "weight": vote.weight }),
                    );
                }
                Action::Decide { session, scenario, decision, total, rebalanced, voters } => {
                    let (opened_at, cascaded) = self.opened.get(&session).copied().unwrap_or((now, false));
                    self.sessions.push(SessionRecord {
                        session,
                        scenario,
                        cascaded,
                        opened_at,
                        decided_at: now,
                        decision,
                        total,
                        rebalanced,
                        voters,
                    });
                    self.record(
                        now,
                        Some(id),
                        "decide",
                        json!({
                            "session": session.to_string(),
                            "scenario": scenario,
                            "decision": decision,
                            "total": total,
                            "rebalanced": rebalanced,
                            "voters": voters,
                        }),
                    );
                }
                Action::NetworkDecision { session, scenario, decision, total, closed } => {
                    self.notifications.push(NotificationRecord { time_ms: now, node: id, session, scenario, decision, total });
                    let closed: Vec<String> = closed.iter().map(ToString::to_string).collect();
                    self.record(
                        now,
                        Some(id),
                        "notification",
                        json!({ "session": session.to_string(), "scenario": scenario, "decision": decision, "total": total, "closed": closed }),
                    );
                }
                Action::Ignore { session, from, reason } => {
                    self.record(now, Some(id), "ignore", json!({ "session": session.to_string(), "from": from, "reason": format!("{reason:?}") }));
                }
            }
        }
        self.schedule_timer(id, now);
        Ok(())
    }

    fn schedule_timer(&mut self, id: NodeId, now: SimTime) {
        let n = self.nodes.get_mut(&id).expect("node exists");
        let Some(at) = n.proto().and_then(NodeProtocolState::next_timer) else { return };
        let at = at.max(now);
        if n.pending_timers.insert(at) {
            let epoch = n.epoch;
            self.queue.push(at, Event::ProtocolTimer { node: id, epoch, at });
        }
    }
}

/// Samples every channel `sample_count` times over the window ending at
/// `now`, plus the temperature gradient over the threshold interval.
pub fn sample_window(
    env: &Environment,
    rng: &mut impl Rng,
    extremes: &mut BTreeMap<SensorKind, (f64, f64)>,
    id: NodeId,
    now: SimTime,
    protocol: &ProtocolConfig,
    thresholds: &ThresholdSet,
) -> Result<SensorWindow, SimError> {
    let n = protocol.sample_count as u64;
    let win = protocol.sample_window_ms;
    let times: Vec<SimTime> = (1..=n).map(|i| (now + i * win / n).saturating_sub(win)).collect();
    let mut track = |kind: SensorKind, v: f64| {
        let e = extremes.entry(kind).or_insert((v, v));
        e.0 = e.0.min(v);
        e.1 = e.1.max(v);
    };
    let mut window = SensorWindow::default();
    for kind in SensorKind::ALL {
        let mut values = Vec::with_capacity(times.len());
        for &t in &times {
            let v = env.sample(id, kind, t, rng)?;
            track(kind, v);
            values.push(v);
        }
        window.samples.insert(kind, values);
    }
    let interval_ms = (thresholds.gradient_interval_s * 1000.0).round() as SimTime;
    if now >= interval_ms {
        let t0 = now - interval_ms;
        let a = env.sample(id, SensorKind::Temperature, t0, rng)?;
        let b = env.sample(id, SensorKind::Temperature, now, rng)?;
        let secs = |t: SimTime| t as f64 / 1000.0;
        window.temp_gradient = temp_gradient(&[(secs(t0), a), (secs(now), b)], thresholds.gradient_interval_s).ok();
    }
    Ok(window)
}
