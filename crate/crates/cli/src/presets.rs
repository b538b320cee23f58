//! Built-in runs covering the evaluation scenarios.
//!
//! Every preset uses five nodes (two for most range tests), a 10 s sleep
//! interval and a 20 s vote timeout, long enough for every live node to
//! wake once and answer.

use vigil_core::{NodeId, ProtocolConfig, SimTime};
use vigil_sim::{LinkModel, NodeSetup, RangeSpec, Stimulus, StimulusScript};

use crate::config::{NodeEntry, RunConfig};

fn n(i: u16) -> NodeId {
    NodeId(i)
}

pub fn eval_protocol() -> ProtocolConfig {
    ProtocolConfig { sleep_interval_ms: 10_000, vote_timeout_ms: 20_000, ..Default::default() }
}

fn base(name: &str, description: &str, nodes: u16, end_ms: SimTime, script: StimulusScript) -> RunConfig {
    RunConfig {
        name: name.into(),
        description: description.into(),
        seed: 1,
        seeds: Vec::new(),
        end_ms,
        record_log: true,
        nodes: (1..=nodes).map(NodeEntry::new).collect(),
        defaults: NodeSetup { protocol: eval_protocol(), ..Default::default() },
        link: LinkModel::default(),
        links: Vec::new(),
        profile: Default::default(),
        noise: Default::default(),
        traces: None,
        range: None,
        script,
    }
}

/// Heat ramps up everywhere but only nodes 1..=k are inside it; the
/// smouldering trace starts at 50 s.
pub fn fire(k: u16) -> RunConfig {
    let mut s = StimulusScript::default().with(0, Stimulus::Heat { celsius: 250.0, rate_per_s: 0.5 });
    for i in 1..=5 {
        s.push(0, Stimulus::Expose { node: n(i), level: 0.0 });
    }
    for i in 1..=k {
        s.push(30_000 + 2_000 * u64::from(i - 1), Stimulus::Expose { node: n(i), level: 1.0 });
    }
    s.push(50_000, Stimulus::FireStart);
    base(&format!("fire-oven-{k}"), &format!("oven fire, {k} of 5 nodes exposed"), 5, 120_000, s)
}

pub fn gas() -> RunConfig {
    let mut s = StimulusScript::default().with(30_000, Stimulus::gas_release());
    for i in 1..=5 {
        s.push(0, Stimulus::Expose { node: n(i), level: 0.0 });
        s.push(30_000 + 30_000 * u64::from(i - 1), Stimulus::Expose { node: n(i), level: 1.0 });
    }
    base("gas-oven", "gas escaping near the oven, reaching one more node every 30 s", 5, 200_000, s)
}

/// A trusted probe under the dishwasher (weight 2.5) or an ordinary one.
pub fn water(heavy: bool) -> RunConfig {
    let (name, wet, desc) = if heavy {
        ("water-dishwasher", 1, "dishwasher leak at the weight-2.5 node")
    } else {
        ("water-dishwasher-light", 2, "dishwasher leak at a weight-1 node")
    };
    let s = StimulusScript::default().with(30_000, Stimulus::WaterPresent { node: n(wet) });
    let mut c = base(name, desc, 5, 90_000, s);
    c.nodes[0].node_weight = Some(2.5);
    c
}

/// Mass drop felt by nodes 1..=k; the others sit elsewhere.
pub fn quake(k: u16) -> RunConfig {
    let mut s = StimulusScript::default();
    for i in (k + 1)..=5 {
        s.push(0, Stimulus::Expose { node: n(i), level: 0.0 });
    }
    s.push(40_000, Stimulus::MassDrop { scale: 1.0 });
    let mut c = base(&format!("earthquake-massdrop-{k}"), &format!("mass drop felt by {k} of 5 nodes"), 5, 90_000, s);
    c.defaults.protocol.required_majority.earthquake = 5.0;
    c
}

pub const INTRUSION_CASES: [&str; 6] = ["i", "ii", "iii", "iv", "v", "vi"];

pub fn intrusion(case: &str) -> Option<RunConfig> {
    let motion = |node, duration_ms| Stimulus::Motion { node: n(node), duration_ms };
    let door = |node| Stimulus::Door { node: n(node), open: true };
    let mut s = StimulusScript::default().with(0, Stimulus::ArmIntrusion);
    let desc = match case {
        "i" => "armed, nothing happens",
        "ii" => {
            s.push(30_000, door(1));
            "door opened, no motion"
        }
        "iii" => {
            s.push(30_000, door(1));
            s.push(32_000, motion(2, 20_000));
            "door opened, motion in the next room"
        }
        "iv" => {
            s.push(32_000, motion(3, 20_000));
            "motion at one node only"
        }
        "v" => {
            s.push(30_000, door(1));
            s.push(30_000, motion(1, 5_000));
            s.push(34_000, motion(2, 15_000));
            "intruder walks in through the door and on"
        }
        "vi" => {
            for i in 1..=5 {
                s.push(32_000, motion(i, 20_000));
            }
            "motion everywhere"
        }
        _ => return None,
    };
    let mut c = base(&format!("intrusion-case-{case}"), desc, 5, 90_000, s);
    c.defaults.protocol.required_majority.intrusion = 2.0;
    Some(c)
}

/// `k` nodes with the highest ids fail before a flood reaches every node.
pub fn nodefail(k: u16) -> RunConfig {
    let mut s = StimulusScript::default();
    for i in (6 - k)..=5 {
        s.push(20_000, Stimulus::NodeOff { node: n(i) });
    }
    for i in 1..=5 {
        s.push(40_000, Stimulus::WaterPresent { node: n(i) });
    }
    base(&format!("nodefail-{k}"), &format!("flood with {k} of 5 nodes failed"), 5, 100_000, s)
}

pub const RANGE_CASES: [&str; 5] = ["i", "ii", "iii", "iv", "v"];

pub fn range(case: &str) -> Option<RunConfig> {
    let (desc, rooms, loss): (&str, &[(&str, i32)], f64) = match case {
        "i" => ("same room, line of sight", &[("kitchen", 0), ("kitchen", 0)], 0.0),
        "ii" => ("adjacent rooms, one wall", &[("kitchen", 0), ("living", 0)], 0.0),
        "iii" => ("one floor apart", &[("kitchen", 0), ("bedroom", 1)], 0.0),
        "iv" => ("two floors and several walls apart", &[("basement", -1), ("attic", 1)], 0.043),
        "v" => (
            "four transmitters, one receiver",
            &[("kitchen", 0), ("living", 0), ("hall", 0), ("bedroom", 1), ("office", 0)],
            0.0,
        ),
        _ => return None,
    };
    let mut c = base(&format!("range-{case}"), desc, rooms.len() as u16, 0, StimulusScript::default());
    for (e, (room, floor)) in c.nodes.iter_mut().zip(rooms) {
        e.room = room.to_string();
        e.floor = *floor;
    }
    c.link.loss_prob = loss;
    let last = rooms.len() as u16;
    c.range = Some(RangeSpec::new((1..last).map(n).collect(), vec![n(last)]));
    Some(c)
}

/// Five idle nodes for an hour at sleep interval `t_s`.
pub fn power(t_s: u64) -> Option<RunConfig> {
    if ![10, 30, 60].contains(&t_s) {
        return None;
    }
    let mut c = base(&format!("power-{t_s}"), &format!("idle duty cycling at T = {t_s} s"), 5, 3_600_000, StimulusScript::default());
    c.defaults.protocol.sleep_interval_ms = t_s * 1_000;
    Some(c)
}

/// Every preset name, in listing order.
pub fn names() -> Vec<String> {
    let mut v = vec!["fire-oven".to_string()];
    v.extend((0..=5).map(|k| format!("fire-oven-{k}")));
    v.push("gas-oven".into());
    v.push("water-dishwasher".into());
    v.push("water-dishwasher-light".into());
    v.push("earthquake-massdrop".into());
    v.extend((0..=5).map(|k| format!("earthquake-massdrop-{k}")));
    v.extend(INTRUSION_CASES.iter().map(|c| format!("intrusion-case-{c}")));
    v.extend((0..=4).map(|k| format!("nodefail-{k}")));
    v.extend(RANGE_CASES.iter().map(|c| format!("range-{c}")));
    v.extend([10, 30, 60].iter().map(|t| format!("power-{t}")));
    v
}

pub fn preset(name: &str) -> Option<RunConfig> {
    let suffix = |p: &str| name.strip_prefix(p);
    let count = |p: &str, max: u16| suffix(p).and_then(|k| k.parse::<u16>().ok()).filter(|k| *k <= max);
    let mut c = match name {
        "fire-oven" => fire(5),
        "gas-oven" => gas(),
        "water-dishwasher" => water(true),
        "water-dishwasher-light" => water(false),
        "earthquake-massdrop" => quake(5),
        _ => {
            if let Some(k) = count("fire-oven-", 5) {
                fire(k)
            } else if let Some(k) = count("earthquake-massdrop-", 5) {
                quake(k)
            } else if let Some(k) = count("nodefail-", 4) {
                nodefail(k)
            } else if let Some(case) = suffix("intrusion-case-") {
                intrusion(case)?
            } else if let Some(case) = suffix("range-") {
                range(case)?
            } else {
                power(suffix("power-")?.parse().ok()?)?
            }
        }
    };
    c.name = name.to_string();
    Some(c)
}
