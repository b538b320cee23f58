//! The run configuration file.
//!
//! A TOML document describing nodes, links, per-node protocol settings,
//! the energy profile and a stimulus script. Unknown keys are rejected.
//! `--override key=value` edits the parsed document by dotted path before
//! it is checked, so overrides get the same validation as the file itself.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vigil_core::detection::SensorKind;
use vigil_core::power::StageProfile;
use vigil_core::{NodeId, SimTime};
use vigil_sim::trace::{load_trace, FIRE_COLUMNS, FIRE_MARK_MS, QUAKE_COLUMNS, QUAKE_MARK_MS};
use vigil_sim::{LinkModel, NodeSetup, NodeSpec, RangeSpec, SimConfig, StimulusScript, Topology, TraceSet};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeEntry {
    pub id: NodeId,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub room: String,
    #[serde(default)]
    pub floor: i32,
    /// Overrides `defaults.protocol.node_weight`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_weight: Option<f64>,
    /// Overrides `defaults.boot_at_ms`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boot_at_ms: Option<SimTime>,
}

impl NodeEntry {
    pub fn new(id: u16) -> Self {
        Self { id: NodeId(id), room: String::new(), floor: 0, node_weight: None, boot_at_ms: None }
    }
}

/// Changes one directed link, and its reverse when `symmetric`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkEntry {
    pub from: NodeId,
    pub to: NodeId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_prob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<SimTime>,
    #[serde(default = "yes")]
    pub symmetric: bool,
    /// Removes the link instead.
    #[serde(default)]
    pub remove: bool,
}

/// Replacement trace files. Columns must match the bundled ones
/// (`Time,Odor,CO` and `Time,X,Y,Z`, time in ms).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceFiles {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fire: Option<PathBuf>,
    #[serde(default = "fire_mark")]
    pub fire_mark_ms: SimTime,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quake: Option<PathBuf>,
    #[serde(default = "quake_mark")]
    pub quake_mark_ms: SimTime,
}

fn yes() -> bool {
    true
}
fn fire_mark() -> SimTime {
    FIRE_MARK_MS
}
fn quake_mark() -> SimTime {
    QUAKE_MARK_MS
}
fn default_seed() -> u64 {
    1
}
fn default_end() -> SimTime {
    120_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Seeds for `replicate` when `--seeds` is not given.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_end")]
    pub end_ms: SimTime,
    #[serde(default = "yes")]
    pub record_log: bool,
    pub nodes: Vec<NodeEntry>,
    /// Setup shared by every node.
    #[serde(default)]
    pub defaults: NodeSetup,
    /// Link between every ordered pair of nodes.
    #[serde(default)]
    pub link: LinkModel,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub links: Vec<LinkEntry>,
    #[serde(default)]
    pub profile: StageProfile,
    /// Gaussian noise sigma per analog channel.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub noise: BTreeMap<SensorKind, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub traces: Option<TraceFiles>,
    /// Present for range-test configurations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<RangeSpec>,
    #[serde(default)]
    pub script: StimulusScript,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        Self::parse_with_overrides(text, &[])
    }

    /// Parses `text`, applies `key=value` overrides and checks the result.
    pub fn parse_with_overrides(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        Self::from_table(doc)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse_with_overrides(&text, overrides)
    }

    /// Applies overrides to an already built configuration.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self, CliError> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut doc = toml::Table::try_from(self).map_err(|e| CliError::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        Self::from_table(doc)
    }

    fn from_table(doc: toml::Table) -> Result<Self, CliError> {
        // round trip through text so errors point at the offending line
        let text = toml::to_string(&doc).map_err(|e| CliError::Config(e.to_string()))?;
        let config: Self = toml::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.nodes.is_empty() {
            return Err(CliError::Config("`nodes` must list at least one node".into()));
        }
        if let Some(r) = &self.range {
            r.validate(&self.topology()?).map_err(CliError::from_sim)?;
        } else {
            self.sim_config(self.seed)?.validate().map_err(CliError::from_sim)?;
        }
        Ok(())
    }

    pub fn topology(&self) -> Result<Topology, CliError> {
        let specs = self.nodes.iter().map(|n| NodeSpec { id: n.id, room: n.room.clone(), floor: n.floor });
        let mut topo = Topology::full_mesh(specs, self.link).map_err(CliError::from_sim)?;
        for l in &self.links {
            let pairs = if l.symmetric { vec![(l.from, l.to), (l.to, l.from)] } else { vec![(l.from, l.to)] };
            for (a, b) in pairs {
                if l.remove {
                    topo.remove_link(a, b);
                    continue;
                }
                let mut link = topo.link(a, b).copied().unwrap_or(self.link);
                if let Some(p) = l.loss_prob {
                    link.loss_prob = p;
                }
                if let Some(ms) = l.latency_ms {
                    link.latency_ms = ms;
                }
                topo.set_link(a, b, link).map_err(|e| CliError::Config(format!("links: {e}")))?;
            }
        }
        Ok(topo)
    }

    pub fn traces(&self) -> Result<TraceSet, CliError> {
        let mut set = TraceSet::builtin();
        let Some(files) = &self.traces else { return Ok(set) };
        let open = |p: &PathBuf| File::open(p).map_err(|e| CliError::Config(format!("traces: {}: {e}", p.display())));
        let parsed = |p: &PathBuf, e: vigil_sim::TraceError| CliError::Config(format!("traces: {}: {e}", p.display()));
        if let Some(p) = &files.fire {
            set.fire = load_trace(open(p)?, "Time", &FIRE_COLUMNS).map_err(|e| parsed(p, e))?.into();
        }
        if let Some(p) = &files.quake {
            set.quake = load_trace(open(p)?, "Time", &QUAKE_COLUMNS).map_err(|e| parsed(p, e))?.into();
        }
        set.fire_mark_ms = files.fire_mark_ms;
        set.quake_mark_ms = files.quake_mark_ms;
        Ok(set)
    }

    pub fn sim_config(&self, seed: u64) -> Result<SimConfig, CliError> {
        let nodes = self
            .nodes
            .iter()
            .map(|n| {
                let mut setup = self.defaults.clone();
                if let Some(w) = n.node_weight {
                    setup.protocol.node_weight = w;
                }
                if let Some(t) = n.boot_at_ms {
                    setup.boot_at_ms = t;
                }
                (n.id, setup)
            })
            .collect();
        Ok(SimConfig {
            topology: self.topology()?,
            nodes,
            profile: self.profile,
            script: self.script.clone(),
            traces: self.traces()?,
            noise: self.noise.clone(),
            seed,
            end_ms: self.end_ms,
            record_log: self.record_log,
        })
    }

    /// Seeds `replicate` runs: `count` consecutive seeds from `base`, or the
    /// configured list when no count is given.
    pub fn replicate_seeds(&self, base: Option<u64>, count: Option<usize>) -> Result<Vec<u64>, CliError> {
        match count {
            Some(0) => Err(CliError::Usage("--seeds must be >= 1".into())),
            Some(n) => {
                let base = base.unwrap_or(self.seed);
                Ok((0..n as u64).map(|i| base + i).collect())
            }
            None if !self.seeds.is_empty() => Ok(self.seeds.clone()),
            None => Err(CliError::Usage("give --seeds N or a `seeds` list in the config".into())),
        }
    }
}

/// Sets `path = value` in a TOML table. Path segments are separated by
/// dots; numeric segments index arrays. The value is read as a TOML value
/// and taken as a plain string if it does not parse.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override `{assignment}` is not key=value")))?;
    let path = path.trim();
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Usage(format!("override key `{path}` is malformed")));
    }
    let (last, parents) = keys.split_last().expect("split yields at least one key");
    let mut root = toml::Value::Table(std::mem::take(doc));
    let result = set_path(&mut root, &keys, parents, last, value);
    let toml::Value::Table(t) = root else { unreachable!("root stays a table") };
    *doc = t;
    result
}

fn set_path(root: &mut toml::Value, keys: &[&str], parents: &[&str], last: &str, value: toml::Value) -> Result<(), CliError> {
    let path = keys.join(".");
    let mut cur = root;
    for (depth, key) in parents.iter().enumerate() {
        let here = keys[..=depth].join(".");
        cur = match cur {
            toml::Value::Table(t) => t.entry(key.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new())),
            toml::Value::Array(a) => {
                let i: usize = key.parse().map_err(|_| CliError::Config(format!("override `{here}`: expected an index")))?;
                let len = a.len();
                a.get_mut(i).ok_or_else(|| CliError::Config(format!("override `{here}`: index out of range (len {len})")))?
            }
            _ => return Err(CliError::Config(format!("override `{here}`: not a table"))),
        };
    }
    match cur {
        toml::Value::Table(t) => {
            t.insert(last.to_string(), value);
        }
        toml::Value::Array(a) => {
            let i: usize = last.parse().map_err(|_| CliError::Config(format!("override `{path}`: expected an index")))?;
            let len = a.len();
            *a.get_mut(i).ok_or_else(|| CliError::Config(format!("override `{path}`: index out of range (len {len})")))? = value;
        }
        _ => return Err(CliError::Config(format!("override `{path}`: parent is not a table"))),
    }
    Ok(())
}
