use serde::{Deserialize, Serialize};
use vigil_core::{NodeId, ScenarioId, SimTime};

/// One timed change to the world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum Stimulus {
    /// Replays the fire trace with its ignition mark at this time.
    FireStart,
    /// Odorized gas ramps up; CO follows at a fraction of the odor excess.
    GasRelease {
        #[serde(default = "default_gas_rate")]
        odor_rate_per_s: f64,
        #[serde(default = "default_gas_max")]
        odor_max: f64,
        #[serde(default = "default_co_cross")]
        co_cross: f64,
    },
    /// Temperature seen at full exposure, in °C. With a positive
    /// `rate_per_s` it climbs from ambient at that rate instead of stepping.
    Heat {
        celsius: f64,
        #[serde(default)]
        rate_per_s: f64,
    },
    /// How much of the global environment `node` sees, in [0, 1].
    Expose { node: NodeId, level: f64 },
    WaterPresent { node: NodeId },
    WaterAbsent { node: NodeId },
    /// Replays the mass-drop trace; deviations from rest are multiplied by `scale`.
    MassDrop {
        #[serde(default = "default_scale")]
        scale: f64,
    },
    Motion { node: NodeId, duration_ms: SimTime },
    Door { node: NodeId, open: bool },
    NodeOff { node: NodeId },
    NodeOn { node: NodeId },
    ArmIntrusion,
    DisarmIntrusion,
    SetLoss {
        from: NodeId,
        to: NodeId,
        loss_prob: f64,
        #[serde(default = "default_true")]
        symmetric: bool,
    },
}

fn default_gas_rate() -> f64 {
    40.0
}
fn default_gas_max() -> f64 {
    800.0
}
fn default_co_cross() -> f64 {
    0.3
}
fn default_scale() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}

impl Stimulus {
    pub fn gas_release() -> Self {
        Stimulus::GasRelease { odor_rate_per_s: default_gas_rate(), odor_max: default_gas_max(), co_cross: default_co_cross() }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Stimulus::FireStart => "fire_start",
            Stimulus::GasRelease { .. } => "gas_release",
            Stimulus::Heat { .. } => "heat",
            Stimulus::Expose { .. } => "expose",
            Stimulus::WaterPresent { .. } => "water_present",
            Stimulus::WaterAbsent { .. } => "water_absent",
            Stimulus::MassDrop { .. } => "mass_drop",
            Stimulus::Motion { .. } => "motion",
            Stimulus::Door { .. } => "door",
            Stimulus::NodeOff { .. } => "node_off",
            Stimulus::NodeOn { .. } => "node_on",
            Stimulus::ArmIntrusion => "arm_intrusion",
            Stimulus::DisarmIntrusion => "disarm_intrusion",
            Stimulus::SetLoss { .. } => "set_loss",
        }
    }

    /// Nodes the stimulus names explicitly.
    pub fn nodes(&self) -> Vec<NodeId> {
        match *self {
            Stimulus::Expose { node, .. }
            | Stimulus::WaterPresent { node }
            | Stimulus::WaterAbsent { node }
            | Stimulus::Motion { node, .. }
            | Stimulus::Door { node, .. }
            | Stimulus::NodeOff { node }
            | Stimulus::NodeOn { node } => vec![node],
            Stimulus::SetLoss { from, to, .. } => vec![from, to],
            _ => Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(format!("{} `{name}` must be in [0, 1], got {v}", self.name()))
            }
        };
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(format!("{} `{name}` must be > 0, got {v}", self.name()))
            }
        };
        match *self {
            Stimulus::Expose { level, .. } => unit("level", level),
            Stimulus::SetLoss { loss_prob, from, to, .. } => {
                if from == to {
                    return Err(format!("set_loss needs two distinct nodes, got {from} twice"));
                }
                unit("loss_prob", loss_prob)
            }
            Stimulus::MassDrop { scale } => positive("scale", scale),
            Stimulus::GasRelease { odor_rate_per_s, odor_max, co_cross } => {
                positive("odor_rate_per_s", odor_rate_per_s)?;
                positive("odor_max", odor_max)?;
                unit("co_cross", co_cross)
            }
            Stimulus::Heat { celsius, rate_per_s } if !(celsius.is_finite() && rate_per_s.is_finite() && rate_per_s >= 0.0) => {
                Err("heat needs a finite `celsius` and `rate_per_s` >= 0".into())
            }
            Stimulus::Motion { duration_ms: 0, .. } => Err("motion `duration_ms` must be > 0".into()),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub at_ms: SimTime,
    #[serde(flatten)]
    pub stimulus: Stimulus,
}

/// Stimuli in time order; entries at the same time keep their listed order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StimulusScript {
    entries: Vec<ScriptEntry>,
}

impl StimulusScript {
    pub fn new(mut entries: Vec<ScriptEntry>) -> Self {
        entries.sort_by_key(|e| e.at_ms);
        Self { entries }
    }

    pub fn push(&mut self, at_ms: SimTime, stimulus: Stimulus) {
        let pos = self.entries.partition_point(|e| e.at_ms <= at_ms);
        self.entries.insert(pos, ScriptEntry { at_ms, stimulus });
    }

    pub fn with(mut self, at_ms: SimTime, stimulus: Stimulus) -> Self {
        self.push(at_ms, stimulus);
        self
    }

    pub fn entries(&self) -> &[ScriptEntry] {
        &self.entries
    }

    pub fn validate(&self) -> Result<(), String> {
        self.entries.iter().try_for_each(|e| e.stimulus.validate())
    }

    /// Scenarios that truly occur, with the time of their first cause.
    ///
    /// Motion only counts as an intrusion while the system is armed; the
    /// fire trace also carries gas, but it is a fire, not a leak.
    pub fn ground_truth(&self) -> Vec<(ScenarioId, SimTime)> {
        let mut armed = false;
        let mut out: Vec<(ScenarioId, SimTime)> = Vec::new();
        let mut add = |s: ScenarioId, t: SimTime| {
            if !out.iter().any(|(x, _)| *x == s) {
                out.push((s, t));
            }
        };
        for e in &self.entries {
            match e.stimulus {
                Stimulus::FireStart => add(ScenarioId::Fire, e.at_ms),
                Stimulus::GasRelease { .. } => add(ScenarioId::GasLeak, e.at_ms),
                Stimulus::WaterPresent { .. } => add(ScenarioId::WaterLeak, e.at_ms),
                Stimulus::MassDrop { .. } => add(ScenarioId::Earthquake, e.at_ms),
                Stimulus::Motion { .. } if armed => add(ScenarioId::Intrusion, e.at_ms),
                Stimulus::ArmIntrusion => armed = true,
                Stimulus::DisarmIntrusion => armed = false,
                _ => {}
            }
        }
        out.sort();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Deserialize)]
    struct Doc {
        script: StimulusScript,
    }

    #[test]
    fn json_round_trip_and_defaults() {
        let s = StimulusScript::new(vec![
            ScriptEntry { at_ms: 5, stimulus: Stimulus::MassDrop { scale: 1.0 } },
            ScriptEntry { at_ms: 1, stimulus: Stimulus::Door { node: NodeId(2), open: true } },
        ]);
        assert_eq!(s.entries()[0].at_ms, 1);
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<StimulusScript>(&text).unwrap(), s);
        let d: Doc = serde_json::from_str(r#"{"script":[{"at_ms":3,"action":"mass_drop"}]}"#).unwrap();
        assert_eq!(d.script.entries()[0].stimulus, Stimulus::MassDrop { scale: 1.0 });
    }

    #[test]
    fn unknown_action_or_field_is_rejected() {
        assert!(serde_json::from_str::<StimulusScript>(r#"[{"at_ms":3,"action":"flood"}]"#).is_err());
        assert!(serde_json::from_str::<StimulusScript>(r#"[{"at_ms":3,"action":"heat","celsius":1,"x":2}]"#).is_err());
        assert!(serde_json::from_str::<StimulusScript>(r#"[{"at_ms":3,"action":"door","node":1}]"#).is_err());
    }

    #[test]
    fn ground_truth_follows_arming() {
        let s = StimulusScript::default()
            .with(0, Stimulus::Motion { node: NodeId(1), duration_ms: 10 })
            .with(50, Stimulus::ArmIntrusion)
            .with(60, Stimulus::Door { node: NodeId(1), open: true })
            .with(70, Stimulus::FireStart)
            .with(80, Stimulus::Motion { node: NodeId(2), duration_ms: 10 });
        assert_eq!(s.ground_truth(), vec![(ScenarioId::Fire, 70), (ScenarioId::Intrusion, 80)]);
    }

    #[test]
    fn validation() {
        assert!(Stimulus::Expose { node: NodeId(1), level: 1.5 }.validate().is_err());
        assert!(Stimulus::MassDrop { scale: 0.0 }.validate().is_err());
        assert!(Stimulus::SetLoss { from: NodeId(1), to: NodeId(1), loss_prob: 0.1, symmetric: true }.validate().is_err());
        assert!(Stimulus::gas_release().validate().is_ok());
    }
}
