//! Link-quality test: transmitters send fixed bursts of dummy frames to
//! receivers that stay awake for the whole test.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use vigil_core::{NodeId, SimTime};

use crate::error::SimError;
use crate::queue::EventQueue;
use crate::topology::Topology;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangeSpec {
    pub transmitters: Vec<NodeId>,
    pub receivers: Vec<NodeId>,
    #[serde(default = "default_messages")]
    pub messages: u32,
    #[serde(default = "default_gap")]
    pub gap_ms: SimTime,
    #[serde(default = "default_loops")]
    pub loops: u32,
    /// Pause between two loops.
    #[serde(default = "default_loop_pause")]
    pub loop_pause_ms: SimTime,
}

fn default_messages() -> u32 {
    1_000
}
fn default_gap() -> SimTime {
    10
}
fn default_loops() -> u32 {
    50
}
fn default_loop_pause() -> SimTime {
    1_000
}

impl RangeSpec {
    pub fn new(transmitters: Vec<NodeId>, receivers: Vec<NodeId>) -> Self {
        Self {
            transmitters,
            receivers,
            messages: default_messages(),
            gap_ms: default_gap(),
            loops: default_loops(),
            loop_pause_ms: default_loop_pause(),
        }
    }

    pub fn validate(&self, topology: &Topology) -> Result<(), SimError> {
        let bad = |s: &str| Err(SimError::ConfigInvalid(format!("range test: {s}")));
        if self.transmitters.is_empty() || self.receivers.is_empty() {
            return bad("needs at least one transmitter and one receiver");
        }
        if self.messages == 0 || self.loops == 0 {
            return bad("messages and loops must be >= 1");
        }
        if self.gap_ms == 0 {
            return bad("gap_ms must be >= 1");
        }
        for &tx in &self.transmitters {
            for &rx in &self.receivers {
                if tx != rx {
                    topology.link(tx, rx)?;
                }
            }
        }
        Ok(())
    }

    pub fn streams(&self) -> Vec<(NodeId, NodeId)> {
        let mut out = Vec::new();
        for &tx in &self.transmitters {
            for &rx in &self.receivers {
                if tx != rx {
                    out.push((tx, rx));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StreamSummary {
    pub mean: f64,
    pub min: u32,
    pub max: u32,
}

/// Received counts per loop, one entry per (transmitter, receiver) stream.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RangeReport {
    pub messages: u32,
    pub loops: Vec<BTreeMap<(NodeId, NodeId), u32>>,
}

impl RangeReport {
    pub fn counts(&self, tx: NodeId, rx: NodeId) -> Vec<u32> {
        self.loops.iter().map(|l| l.get(&(tx, rx)).copied().unwrap_or(0)).collect()
    }

    pub fn streams(&self) -> Vec<(NodeId, NodeId)> {
        self.loops.first().map(|l| l.keys().copied().collect()).unwrap_or_default()
    }

    pub fn summary(&self, tx: NodeId, rx: NodeId) -> StreamSummary {
        let c = self.counts(tx, rx);
        StreamSummary {
            mean: c.iter().map(|&x| f64::from(x)).sum::<f64>() / c.len().max(1) as f64,
            min: c.iter().copied().min().unwrap_or(0),
            max: c.iter().copied().max().unwrap_or(0),
        }
    }

    /// Comma-separated table. One stream gives `Loopcount,RecvMsg`; several
    /// give one `RecvMsg_<tx>_<rx>` column each.
    pub fn to_csv(&self) -> String {
        let streams = self.streams();
        let mut out = String::from("Loopcount");
        if streams.len() == 1 {
            out.push_str(",RecvMsg");
        } else {
            for (tx, rx) in &streams {
                out.push_str(&format!(",RecvMsg_{tx}_{rx}"));
            }
        }
        out.push('\n');
        for (i, l) in self.loops.iter().enumerate() {
            out.push_str(&(i + 1).to_string());
            for s in &streams {
                out.push_str(&format!(",{}", l[s]));
            }
            out.push('\n');
        }
        out
    }
}

enum Ev {
    Send { tx: NodeId, rx: NodeId, lp: usize },
    Arrive { tx: NodeId, rx: NodeId, lp: usize },
}

/// Runs the test on the topology's links. Concurrent streams are
/// independent: there is no contention model.
pub fn range_test(topology: &Topology, spec: &RangeSpec, seed: u64) -> Result<RangeReport, SimError> {
    spec.validate(topology)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let streams = spec.streams();
    let mut queue = EventQueue::default();
    let loop_len = u64::from(spec.messages) * spec.gap_ms + spec.loop_pause_ms;
    for lp in 0..spec.loops as usize {
        let base = lp as SimTime * loop_len;
        for m in 0..u64::from(spec.messages) {
            for &(tx, rx) in &streams {
                queue.push(base + m * spec.gap_ms, Ev::Send { tx, rx, lp });
            }
        }
    }
    let empty: BTreeMap<(NodeId, NodeId), u32> = streams.iter().map(|s| (*s, 0)).collect();
    let mut loops = vec![empty; spec.loops as usize];
    while let Some((now, ev)) = queue.pop() {
        match ev {
            Ev::Send { tx, rx, lp } => {
                let link = topology.link(tx, rx)?;
                if !rng.random_bool(link.loss_prob) {
                    queue.push(now + link.latency_ms, Ev::Arrive { tx, rx, lp });
                }
            }
            Ev::Arrive { tx, rx, lp } => *loops[lp].get_mut(&(tx, rx)).expect("stream known") += 1,
        }
    }
    Ok(RangeReport { messages: spec.messages, loops })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::LinkModel;

    #[test]
    fn lossless_links_deliver_everything() {
        let t = Topology::uniform(5, LinkModel::default()).unwrap();
        let spec = RangeSpec { loops: 3, ..RangeSpec::new(vec![NodeId(1), NodeId(2), NodeId(3), NodeId(4)], vec![NodeId(5)]) };
        let r = range_test(&t, &spec, 1).unwrap();
        assert_eq!(r.streams().len(), 4);
        for (tx, rx) in r.streams() {
            assert_eq!(r.counts(tx, rx), vec![1_000; 3]);
        }
        let csv = r.to_csv();
        assert!(csv.starts_with("Loopcount,RecvMsg_1_5,RecvMsg_2_5,RecvMsg_3_5,RecvMsg_4_5\n1,1000,"));
    }

    #[test]
    fn total_loss_and_single_stream_csv() {
        let t = Topology::uniform(2, LinkModel { loss_prob: 1.0, latency_ms: 2 }).unwrap();
        let spec = RangeSpec { loops: 2, messages: 10, ..RangeSpec::new(vec![NodeId(1)], vec![NodeId(2)]) };
        let r = range_test(&t, &spec, 1).unwrap();
        assert_eq!(r.to_csv(), "Loopcount,RecvMsg\n1,0\n2,0\n");
    }

    #[test]
    fn missing_link_is_an_error() {
        let mut t = Topology::uniform(2, LinkModel::default()).unwrap();
        t.remove_link(NodeId(1), NodeId(2));
        let spec = RangeSpec::new(vec![NodeId(1)], vec![NodeId(2)]);
        assert!(matches!(range_test(&t, &spec, 1), Err(SimError::NoLink { .. })));
    }
}
