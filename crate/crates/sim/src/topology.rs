use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use vigil_core::{NodeId, SimTime};

use crate::error::SimError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: NodeId,
    #[serde(default)]
    pub room: String,
    #[serde(default)]
    pub floor: i32,
}

/// A directed radio link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkModel {
    pub loss_prob: f64,
    pub latency_ms: SimTime,
}

impl Default for LinkModel {
    fn default() -> Self {
        Self { loss_prob: 0.0, latency_ms: 2 }
    }
}

impl LinkModel {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.loss_prob) {
            return Err(format!("loss_prob must be in [0, 1], got {}", self.loss_prob));
        }
        if self.latency_ms == 0 {
            return Err("latency_ms must be >= 1".into());
        }
        Ok(())
    }
}

/// Nodes and the directed links between them. Nodes with no link between
/// them cannot talk; there is no multi-hop routing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Topology {
    nodes: BTreeMap<NodeId, NodeSpec>,
    links: BTreeMap<(NodeId, NodeId), LinkModel>,
}

impl Topology {
    pub fn new(nodes: impl IntoIterator<Item = NodeSpec>) -> Result<Self, SimError> {
        let mut map = BTreeMap::new();
        for n in nodes {
            if n.id.is_broadcast() {
                return Err(SimError::ConfigInvalid(format!("node id {} is reserved", n.id)));
            }
            if map.insert(n.id, n.clone()).is_some() {
                return Err(SimError::ConfigInvalid(format!("duplicate node id {}", n.id)));
            }
        }
        Ok(Self { nodes: map, links: BTreeMap::new() })
    }

    /// Every ordered pair of distinct nodes connected with `link`.
    pub fn full_mesh(nodes: impl IntoIterator<Item = NodeSpec>, link: LinkModel) -> Result<Self, SimError> {
        let mut t = Self::new(nodes)?;
        let ids: Vec<NodeId> = t.nodes.keys().copied().collect();
        for &a in &ids {
            for &b in &ids {
                if a != b {
                    t.set_link(a, b, link)?;
                }
            }
        }
        Ok(t)
    }

    /// Nodes `1..=n` in one room, fully meshed.
    pub fn uniform(n: u16, link: LinkModel) -> Result<Self, SimError> {
        Self::full_mesh((1..=n).map(|i| NodeSpec { id: NodeId(i), room: String::new(), floor: 0 }), link)
    }

    pub fn set_link(&mut self, from: NodeId, to: NodeId, link: LinkModel) -> Result<(), SimError> {
        if from == to {
            return Err(SimError::ConfigInvalid(format!("self link on node {from}")));
        }
        for id in [from, to] {
            if !self.nodes.contains_key(&id) {
                return Err(SimError::ConfigInvalid(format!("link names unknown node {id}")));
            }
        }
        link.validate().map_err(|e| SimError::ConfigInvalid(format!("link {from}->{to}: {e}")))?;
        self.links.insert((from, to), link);
        Ok(())
    }

    pub fn remove_link(&mut self, from: NodeId, to: NodeId) {
        self.links.remove(&(from, to));
    }

    pub fn link(&self, from: NodeId, to: NodeId) -> Result<&LinkModel, SimError> {
        self.links.get(&(from, to)).ok_or(SimError::NoLink { from, to })
    }

    pub fn link_mut(&mut self, from: NodeId, to: NodeId) -> Result<&mut LinkModel, SimError> {
        self.links.get_mut(&(from, to)).ok_or(SimError::NoLink { from, to })
    }

    pub fn nodes(&self) -> &BTreeMap<NodeId, NodeSpec> {
        &self.nodes
    }

    pub fn links(&self) -> &BTreeMap<(NodeId, NodeId), LinkModel> {
        &self.links
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.keys().copied()
    }

    /// Single-hop neighbors `id` can send to.
    pub fn neighbors(&self, id: NodeId) -> BTreeSet<NodeId> {
        self.links.keys().filter(|(a, _)| *a == id).map(|(_, b)| *b).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mesh_and_errors() {
        let mut t = Topology::uniform(3, LinkModel::default()).unwrap();
        assert_eq!(t.links().len(), 6);
        assert_eq!(t.neighbors(NodeId(1)), [NodeId(2), NodeId(3)].into_iter().collect());
        t.remove_link(NodeId(1), NodeId(3));
        assert_eq!(t.link(NodeId(1), NodeId(3)), Err(SimError::NoLink { from: NodeId(1), to: NodeId(3) }));
        assert!(t.link(NodeId(3), NodeId(1)).is_ok());
        assert!(t.set_link(NodeId(1), NodeId(1), LinkModel::default()).is_err());
        assert!(t.set_link(NodeId(1), NodeId(9), LinkModel::default()).is_err());
        assert!(t.set_link(NodeId(1), NodeId(2), LinkModel { loss_prob: 1.5, latency_ms: 1 }).is_err());
        let dup = [NodeSpec { id: NodeId(1), room: "a".into(), floor: 0 }, NodeSpec { id: NodeId(1), room: "b".into(), floor: 0 }];
        assert!(Topology::new(dup).is_err());
    }
}
