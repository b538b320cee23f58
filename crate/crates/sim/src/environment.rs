//! The physical world as the nodes' sensors see it.
//!
//! Analog channels have one global signal each. A node reads
//! `ambient + exposure * (global - ambient)`, so an unexposed node sees
//! ambient conditions and a fully exposed one sees the global signal.
//! Water probe, PIR and door contact are local to one node.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use vigil_core::detection::{clip_accel, SensorKind};
use vigil_core::{NodeId, SimTime};

use crate::error::SimError;
use crate::script::{Stimulus, StimulusScript};
use crate::trace::{TraceChannel, TraceSet};

#[derive(Debug, Clone, PartialEq)]
pub enum Signal {
    Constant(f64),
    /// Replays `channel` so that trace time `mark` falls on `start`.
    /// Deviations from `rest` are multiplied by `scale`.
    Trace { channel: Arc<TraceChannel>, start: SimTime, mark: SimTime, rest: f64, scale: f64 },
    /// `base + min(rate_per_s * elapsed, max)` from `start`.
    Ramp { start: SimTime, base: f64, rate_per_s: f64, max: f64 },
}

impl Signal {
    fn at(&self, t: SimTime) -> f64 {
        match self {
            Signal::Constant(v) => *v,
            Signal::Trace { channel, start, mark, rest, scale } => {
                let local = (t + mark).saturating_sub(*start);
                rest + scale * (channel.at(local) - rest)
            }
            Signal::Ramp { start, base, rate_per_s, max } => {
                let dt = t.saturating_sub(*start) as f64 / 1000.0;
                base + (rate_per_s * dt).min(*max)
            }
        }
    }
}

/// Piecewise-constant function of time.
#[derive(Debug, Clone, Default, PartialEq)]
struct Steps(Vec<(SimTime, f64)>);

impl Steps {
    fn set(&mut self, t: SimTime, v: f64) {
        let pos = self.0.partition_point(|&(x, _)| x <= t);
        self.0.insert(pos, (t, v));
    }

    fn at(&self, t: SimTime, default: f64) -> f64 {
        match self.0.partition_point(|&(x, _)| x <= t) {
            0 => default,
            i => self.0[i - 1].1,
        }
    }
}

pub fn default_ambient() -> BTreeMap<SensorKind, f64> {
    use SensorKind::*;
    [(Co, 400.0), (OdorGas, 600.0), (Temperature, 20.0), (AccelX, 0.0), (AccelY, 0.0), (AccelZ, 1.0), (WaterProbe, 0.0), (Pir, 0.0), (Hall, 0.0)]
        .into_iter()
        .collect()
}

#[derive(Debug, Clone, Default)]
pub struct Environment {
    ambient: BTreeMap<SensorKind, f64>,
    global: BTreeMap<SensorKind, Vec<(SimTime, Signal)>>,
    exposure: BTreeMap<NodeId, Steps>,
    water: BTreeMap<NodeId, Steps>,
    door: BTreeMap<NodeId, Steps>,
    motion: BTreeMap<NodeId, Vec<(SimTime, SimTime)>>,
    noise: BTreeMap<SensorKind, f64>,
}

impl Environment {
    pub fn new(ambient: BTreeMap<SensorKind, f64>) -> Self {
        Self { ambient, ..Default::default() }
    }

    /// Builds the world a script describes, on top of the default ambient.
    pub fn from_script(script: &StimulusScript, traces: &TraceSet) -> Self {
        let mut env = Self::new(default_ambient());
        for e in script.entries() {
            env.apply(e.at_ms, &e.stimulus, traces);
        }
        env
    }

    pub fn set_noise(&mut self, kind: SensorKind, sigma: f64) {
        self.noise.insert(kind, sigma);
    }

    pub fn set_ambient(&mut self, kind: SensorKind, value: f64) {
        self.ambient.insert(kind, value);
    }

    pub fn ambient(&self, kind: SensorKind) -> Option<f64> {
        self.ambient.get(&kind).copied()
    }

    pub fn set_global(&mut self, kind: SensorKind, from: SimTime, signal: Signal) {
        let segs = self.global.entry(kind).or_default();
        let pos = segs.partition_point(|(x, _)| *x <= from);
        segs.insert(pos, (from, signal));
    }

    fn replay(&mut self, at: SimTime, channels: &BTreeMap<SensorKind, TraceChannel>, mark: SimTime, scale: f64) {
        for (kind, channel) in channels {
            let rest = self.ambient(*kind).unwrap_or(0.0);
            let signal = Signal::Trace { channel: Arc::new(channel.clone()), start: at, mark, rest, scale };
            self.set_global(*kind, at, signal);
        }
    }

    /// Folds one stimulus into the world. Stimuli that touch nodes or links
    /// rather than the environment are ignored here.
    pub fn apply(&mut self, at: SimTime, stimulus: &Stimulus, traces: &TraceSet) {
        match *stimulus {
            Stimulus::FireStart => self.replay(at, &traces.fire, traces.fire_mark_ms, 1.0),
            Stimulus::MassDrop { scale } => self.replay(at, &traces.quake, traces.quake_mark_ms, scale),
            Stimulus::GasRelease { odor_rate_per_s, odor_max, co_cross } => {
                let odor = self.ambient(SensorKind::OdorGas).unwrap_or(0.0);
                let co = self.ambient(SensorKind::Co).unwrap_or(0.0);
                self.set_global(SensorKind::OdorGas, at, Signal::Ramp { start: at, base: odor, rate_per_s: odor_rate_per_s, max: odor_max });
                self.set_global(
                    SensorKind::Co,
                    at,
                    Signal::Ramp { start: at, base: co, rate_per_s: odor_rate_per_s * co_cross, max: odor_max * co_cross },
                );
            }
            Stimulus::Heat { celsius, rate_per_s } => {
                let base = self.ambient(SensorKind::Temperature).unwrap_or(0.0);
                let signal = if rate_per_s > 0.0 && celsius > base {
                    Signal::Ramp { start: at, base, rate_per_s, max: celsius - base }
                } else {
                    Signal::Constant(celsius)
                };
                self.set_global(SensorKind::Temperature, at, signal);
            }
            Stimulus::Expose { node, level } => self.exposure.entry(node).or_default().set(at, level),
            Stimulus::WaterPresent { node } => self.water.entry(node).or_default().set(at, 1.0),
            Stimulus::WaterAbsent { node } => self.water.entry(node).or_default().set(at, 0.0),
            Stimulus::Door { node, open } => self.door.entry(node).or_default().set(at, if open { 1.0 } else { 0.0 }),
            Stimulus::Motion { node, duration_ms } => self.motion.entry(node).or_default().push((at, at + duration_ms)),
            Stimulus::NodeOff { .. }
            | Stimulus::NodeOn { .. }
            | Stimulus::ArmIntrusion
            | Stimulus::DisarmIntrusion
            | Stimulus::SetLoss { .. } => {}
        }
    }

    pub fn exposure(&self, node: NodeId, t: SimTime) -> f64 {
        self.exposure.get(&node).map_or(1.0, |s| s.at(t, 1.0))
    }

    /// Noise-free reading.
    pub fn true_value(&self, node: NodeId, kind: SensorKind, t: SimTime) -> Result<f64, SimError> {
        let ambient = self.ambient(kind).ok_or(SimError::UnknownChannel(kind))?;
        let local = |m: &BTreeMap<NodeId, Steps>| m.get(&node).map_or(ambient, |s| s.at(t, ambient));
        let v = match kind {
            SensorKind::WaterProbe => local(&self.water),
            SensorKind::Hall => local(&self.door),
            SensorKind::Pir => {
                let moving = self.motion.get(&node).is_some_and(|iv| iv.iter().any(|&(a, b)| a <= t && t < b));
                if moving {
                    1.0
                } else {
                    ambient
                }
            }
            _ => {
                let global = self
                    .global
                    .get(&kind)
                    .and_then(|segs| match segs.partition_point(|(x, _)| *x <= t) {
                        0 => None,
                        i => Some(segs[i - 1].1.at(t)),
                    })
                    .unwrap_or(ambient);
                ambient + self.exposure(node, t) * (global - ambient)
            }
        };
        Ok(v)
    }

    /// One sensor reading: the true value plus configured Gaussian noise,
    /// with accelerometer axes clipped to the sensor range.
    pub fn sample(&self, node: NodeId, kind: SensorKind, t: SimTime, rng: &mut impl Rng) -> Result<f64, SimError> {
        let mut v = self.true_value(node, kind, t)?;
        if let Some(&sigma) = self.noise.get(&kind).filter(|s| **s > 0.0 && !kind.is_binary()) {
            v += Normal::new(0.0, sigma).expect("sigma is positive").sample(rng);
        }
        if kind.is_accel() {
            v = clip_accel(v);
        }
        Ok(v)
    }
}
