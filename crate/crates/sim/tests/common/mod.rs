#![allow(dead_code)]

use vigil_core::{NodeId, ProtocolConfig, SimTime};
use vigil_sim::{LinkModel, NodeSetup, SimConfig, Stimulus, StimulusScript, Topology};

/// Short sleep and a vote timeout longer than one sleep plus listen, so
/// every live node gets to answer.
pub fn eval_setup() -> NodeSetup {
    NodeSetup {
        protocol: ProtocolConfig { sleep_interval_ms: 10_000, vote_timeout_ms: 20_000, ..Default::default() },
        ..Default::default()
    }
}

pub fn config(n: u16, script: StimulusScript, seed: u64, end_ms: SimTime) -> SimConfig {
    SimConfig::uniform(Topology::uniform(n, LinkModel::default()).unwrap(), eval_setup(), script, seed, end_ms)
}

/// Five nodes, `k` of them carried into the heat one after another.
pub fn fire_script(k: u16) -> StimulusScript {
    let mut s = StimulusScript::default().with(0, Stimulus::Heat { celsius: 250.0, rate_per_s: 0.5 });
    for i in 1..=5 {
        s.push(0, Stimulus::Expose { node: NodeId(i), level: 0.0 });
    }
    for i in 1..=k {
        s.push(30_000 + 2_000 * u64::from(i - 1), Stimulus::Expose { node: NodeId(i), level: 1.0 });
    }
    s.with(50_000, Stimulus::FireStart)
}

pub fn quake_script(k: u16) -> StimulusScript {
    let mut s = StimulusScript::default();
    for i in (k + 1)..=5 {
        s.push(0, Stimulus::Expose { node: NodeId(i), level: 0.0 });
    }
    s.with(40_000, Stimulus::MassDrop { scale: 1.0 })
}

pub fn unanimous(mut c: SimConfig) -> SimConfig {
    for s in c.nodes.values_mut() {
        s.protocol.required_majority.earthquake = 5.0;
    }
    c
}
