mod common;

use std::collections::BTreeMap;

use common::*;
use vigil_core::detection::SensorKind;
use vigil_core::{encode_message, NodeId, ProtocolConfig, ScenarioId};
use vigil_sim::log::write_jsonl;
use vigil_sim::{range_test, run, LinkModel, LogRecord, NodeSetup, RangeSpec, SimConfig, Simulation, Stimulus, StimulusScript, Topology};

fn lossy_fire(seed: u64) -> SimConfig {
    let mut c = config(5, fire_script(4), seed, 120_000);
    c.topology = Topology::uniform(5, LinkModel { loss_prob: 0.1, latency_ms: 3 }).unwrap();
    c.noise.insert(SensorKind::Co, 4.0);
    c.noise.insert(SensorKind::Temperature, 0.2);
    c
}

fn jsonl(log: &[LogRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    write_jsonl(log, &mut out).unwrap();
    out
}

#[test]
fn identical_inputs_give_identical_logs() {
    let a = run(&lossy_fire(42)).unwrap();
    let b = run(&lossy_fire(42)).unwrap();
    assert!(!a.log.is_empty());
    assert_eq!(jsonl(&a.log), jsonl(&b.log));
    let c = run(&lossy_fire(43)).unwrap();
    assert_ne!(jsonl(&a.log), jsonl(&c.log));
}

#[test]
fn log_is_causal_and_single_hop() {
    let c = lossy_fire(5);
    let out = run(&c).unwrap();
    assert!(out.log.windows(2).all(|w| w[0].time_ms <= w[1].time_ms));
    for r in out.log.iter().filter(|r| r.event == "deliver") {
        let from = NodeId(r.details["from"].as_u64().unwrap() as u16);
        let to = r.node.unwrap();
        assert!(c.topology.link(from, to).is_ok(), "{r:?}");
    }
    // every delivery happens exactly one link latency after some send on that link
    let sends: Vec<(u64, u64, u64)> = out
        .log
        .iter()
        .filter(|r| r.event == "send")
        .map(|r| (r.time_ms, u64::from(r.node.unwrap().0), r.details["to"].as_u64().unwrap()))
        .collect();
    for r in out.log.iter().filter(|r| r.event == "deliver") {
        let key = (r.time_ms - 3, r.details["from"].as_u64().unwrap(), u64::from(r.node.unwrap().0));
        assert!(sends.contains(&key), "{r:?}");
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Seen {
    Off,
    Asleep,
    Awake,
}

#[test]
fn nothing_is_delivered_to_sleeping_or_failed_nodes() {
    let mut c = lossy_fire(9);
    c.script.push(55_000, Stimulus::NodeOff { node: NodeId(5) });
    c.script.push(70_000, Stimulus::NodeOn { node: NodeId(5) });
    let out = run(&c).unwrap();
    let mut state: BTreeMap<NodeId, Seen> = BTreeMap::new();
    let mut drops = 0;
    for r in &out.log {
        let Some(node) = r.node else { continue };
        match r.event.as_str() {
            "boot" | "node_off" => {
                state.insert(node, Seen::Off);
            }
            "duty" => {
                let s = if r.details["to"] == "DeepSleep" { Seen::Asleep } else { Seen::Awake };
                state.insert(node, s);
            }
            "deliver" => assert!(state.get(&node) == Some(&Seen::Awake), "{r:?}"),
            "drop" => {
                drops += 1;
                let reason = r.details["reason"].as_str().unwrap();
                let s = state.get(&node).copied().unwrap_or(Seen::Off);
                match reason {
                    "asleep" => assert!(s == Seen::Asleep, "{r:?}"),
                    "failed" | "booting" => assert!(s == Seen::Off, "{r:?}"),
                    "loss" => {}
                    other => panic!("unexpected drop reason {other}"),
                }
            }
            _ => {}
        }
    }
    let k = &out.counters;
    assert_eq!(drops, k.dropped_total());
    assert_eq!(out.log.iter().filter(|r| r.event == "send").count() as u64, k.sent);
    assert_eq!(out.log.iter().filter(|r| r.event == "deliver").count() as u64, k.delivered);
    assert!(k.balanced());
    assert!(k.dropped["loss"] > 0 && k.dropped["asleep"] > 0 && k.dropped["failed"] > 0);
}

#[test]
fn silent_peer_gets_three_retransmissions() {
    let setup = NodeSetup::default();
    let script = StimulusScript::default()
        .with(0, Stimulus::NodeOff { node: NodeId(2) })
        .with(30_000, Stimulus::WaterPresent { node: NodeId(1) });
    let c = SimConfig::uniform(Topology::uniform(2, LinkModel::default()).unwrap(), setup, script, 1, 40_000);
    let out = run(&c).unwrap();
    let s = out.sessions_for(ScenarioId::WaterLeak).next().unwrap();
    assert_eq!(s.decided_at - s.opened_at, 2_000);
    assert_eq!(out.counters.retransmissions, 3);
    let retx: Vec<u64> = out
        .log
        .iter()
        .filter(|r| r.event == "send" && r.details["retransmit"] == true)
        .map(|r| r.time_ms - s.opened_at)
        .collect();
    assert_eq!(retx, [500, 1_000, 1_500]);
    // alone, the initiator's weight is scaled up to the whole network's
    assert!(s.rebalanced);
    assert_eq!(s.total, 2.0);
    assert!(!s.decision);
}

#[test]
fn zero_loss_link_delivers_after_latency() {
    let setup = NodeSetup::default();
    let script = StimulusScript::default()
        .with(12_000, Stimulus::WaterPresent { node: NodeId(1) })
        .with(12_000, Stimulus::WaterPresent { node: NodeId(2) });
    let mut topo = Topology::uniform(2, LinkModel { loss_prob: 0.0, latency_ms: 7 }).unwrap();
    topo.set_link(NodeId(2), NodeId(1), LinkModel { loss_prob: 1.0, latency_ms: 7 }).unwrap();
    let out = run(&SimConfig::uniform(topo, setup, script, 1, 20_000)).unwrap();
    let sends_12: Vec<u64> = out.log.iter().filter(|r| r.event == "send" && r.node == Some(NodeId(1))).map(|r| r.time_ms).collect();
    let delivered_2: Vec<u64> = out.log.iter().filter(|r| r.event == "deliver" && r.node == Some(NodeId(2))).map(|r| r.time_ms).collect();
    assert!(!sends_12.is_empty());
    assert_eq!(sends_12.iter().map(|t| t + 7).collect::<Vec<_>>(), delivered_2);
    assert!(!out.log.iter().any(|r| r.event == "deliver" && r.node == Some(NodeId(1))));
}

fn ln_choose(n: u64, k: u64) -> f64 {
    let lf = |m: u64| (1..=m).map(|i| (i as f64).ln()).sum::<f64>();
    lf(n) - lf(k) - lf(n - k)
}

/// Central 99% interval of Binomial(n, p), by summing the pmf.
fn binomial_99(n: u64, p: f64) -> (u64, u64) {
    let pmf: Vec<f64> = (0..=n).map(|k| (ln_choose(n, k) + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln()).exp()).collect();
    let mut acc = 0.0;
    let mut lo = 0;
    for (k, m) in pmf.iter().enumerate() {
        acc += m;
        if acc >= 0.005 {
            lo = k as u64;
            break;
        }
    }
    acc = 0.0;
    let mut hi = n;
    for (k, m) in pmf.iter().enumerate().rev() {
        acc += m;
        if acc >= 0.005 {
            hi = k as u64;
            break;
        }
    }
    (lo, hi)
}

#[test]
fn loss_draws_stay_within_binomial_bounds() {
    // received count ~ Binomial(1000, 0.957)
    let (lo, hi) = binomial_99(1_000, 1.0 - 0.043);
    // sigma = sqrt(1000 * 0.957 * 0.043) ~ 6.4, so about 2.58 sigma either side
    assert!((938..=943).contains(&lo) && (971..=976).contains(&hi), "{lo}..{hi}");
    let topo = Topology::uniform(2, LinkModel { loss_prob: 0.043, latency_ms: 2 }).unwrap();
    let spec = RangeSpec { loops: 1, ..RangeSpec::new(vec![NodeId(1)], vec![NodeId(2)]) };
    let inside = (0..200u64)
        .filter(|&seed| {
            let c = u64::from(range_test(&topo, &spec, seed).unwrap().counts(NodeId(1), NodeId(2))[0]);
            (lo..=hi).contains(&c)
        })
        .count();
    // 99% interval: expect about 198 of 200 inside
    assert!(inside >= 190, "{inside}");
}

#[test]
fn cascaded_session_survives_initiator_failure() {
    let b = |boot_at_ms| NodeSetup { boot_at_ms, ..eval_setup() };
    let topo = Topology::uniform(3, LinkModel::default()).unwrap();
    let script = StimulusScript::default()
        .with(40_000, Stimulus::WaterPresent { node: NodeId(1) })
        .with(40_000, Stimulus::WaterPresent { node: NodeId(2) })
        .with(40_100, Stimulus::NodeOff { node: NodeId(1) });
    let mut c = SimConfig::uniform(topo, eval_setup(), script, 1, 90_000);
    c.nodes.insert(NodeId(2), b(10_500));
    c.nodes.insert(NodeId(3), b(700));
    let out = run(&c).unwrap();
    let cascaded: Vec<_> = out.sessions_for(ScenarioId::WaterLeak).filter(|s| s.cascaded).collect();
    assert_eq!(cascaded.len(), 1, "{:#?}", out.sessions);
    assert_eq!(cascaded[0].session.initiator, NodeId(2));
    assert!(!out.sessions.iter().any(|s| s.session.initiator == NodeId(1)));
}

#[test]
fn revived_node_does_not_reuse_sequence_numbers() {
    let mut s = StimulusScript::default();
    for (i, t) in [(1u64, 20_000u64), (2, 100_000), (3, 180_000)] {
        let _ = i;
        s.push(t, Stimulus::WaterPresent { node: NodeId(1) });
        s.push(t + 30_000, Stimulus::WaterAbsent { node: NodeId(1) });
        s.push(t + 40_000, Stimulus::NodeOff { node: NodeId(1) });
        s.push(t + 41_000, Stimulus::NodeOn { node: NodeId(1) });
    }
    let out = run(&config(3, s, 2, 260_000)).unwrap();
    let seqs: Vec<u32> = out.sessions.iter().filter(|r| r.session.initiator == NodeId(1)).map(|r| r.session.seq).collect();
    assert_eq!(seqs, [0, 1, 2]);
}

#[test]
fn malformed_frame_is_dropped_and_logged() {
    let mut c = config(2, StimulusScript::default(), 1, 30_000);
    c.nodes.get_mut(&NodeId(2)).unwrap().protocol = ProtocolConfig { idle_listen_ms: 30_000, ..c.nodes[&NodeId(2)].protocol.clone() };
    let mut sim = Simulation::new(&c).unwrap();
    let mut bytes = encode_message(&vigil_core::Message::request(
        vigil_core::SessionId { initiator: NodeId(1), seq: 0 },
        NodeId(1),
        ScenarioId::Fire,
    ));
    bytes.push(0);
    sim.inject(12_000, NodeId(1), NodeId(2), bytes);
    let out = sim.run().unwrap();
    assert_eq!(out.counters.dropped["malformed"], 1);
    assert!(out.log.iter().any(|r| r.event == "malformed" && r.node == Some(NodeId(2))));
    assert!(out.counters.balanced());
}
