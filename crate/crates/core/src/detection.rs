//! Per-scenario detection predicates over sampled sensor windows.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::message::ScenarioId;

/// Accelerometer range; readings saturate here.
pub const ACCEL_RANGE_G: f64 = 2.0;
/// Calibration averages exactly this many post-preheat samples.
pub const CALIBRATION_SAMPLES: usize = 300;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectionError {
    #[error("gas calibration needs exactly {CALIBRATION_SAMPLES} samples per sensor, got {co} CO and {odor} odor")]
    WrongSampleCount { co: usize, odor: usize },
    #[error("temperature window spans {span_s} s, gradient needs {interval_s} s")]
    InsufficientWindow { span_s: f64, interval_s: f64 },
    #[error("gas sensors are not calibrated")]
    NotCalibrated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorKind {
    Co,
    OdorGas,
    Temperature,
    AccelX,
    AccelY,
    AccelZ,
    WaterProbe,
    Pir,
    Hall,
}

impl SensorKind {
    pub const ALL: [SensorKind; 9] = [
        SensorKind::Co,
        SensorKind::OdorGas,
        SensorKind::Temperature,
        SensorKind::AccelX,
        SensorKind::AccelY,
        SensorKind::AccelZ,
        SensorKind::WaterProbe,
        SensorKind::Pir,
        SensorKind::Hall,
    ];

    pub fn is_binary(self) -> bool {
        matches!(self, SensorKind::WaterProbe | SensorKind::Pir | SensorKind::Hall)
    }

    pub fn is_accel(self) -> bool {
        matches!(self, SensorKind::AccelX | SensorKind::AccelY | SensorKind::AccelZ)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SensorKind::Co => "co",
            SensorKind::OdorGas => "odor_gas",
            SensorKind::Temperature => "temperature",
            SensorKind::AccelX => "accel_x",
            SensorKind::AccelY => "accel_y",
            SensorKind::AccelZ => "accel_z",
            SensorKind::WaterProbe => "water_probe",
            SensorKind::Pir => "pir",
            SensorKind::Hall => "hall",
        }
    }
}

impl fmt::Display for SensorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdSet {
    /// Raw units above the calibrated CO baseline.
    pub co_above_baseline: f64,
    /// Raw units above the calibrated odorized-gas baseline.
    pub odor_above_baseline: f64,
    /// °C per second.
    pub temp_gradient: f64,
    pub gradient_interval_s: f64,
    /// Deviation from rest, in g.
    pub accel_g: f64,
}

impl Default for ThresholdSet {
    fn default() -> Self {
        Self {
            co_above_baseline: 150.0,
            odor_above_baseline: 150.0,
            temp_gradient: 0.2,
            gradient_interval_s: 60.0,
            accel_g: 0.8,
        }
    }
}

impl ThresholdSet {
    pub fn validate(&self) -> Result<(), String> {
        let fields = [
            ("co_above_baseline", self.co_above_baseline),
            ("odor_above_baseline", self.odor_above_baseline),
            ("temp_gradient", self.temp_gradient),
            ("gradient_interval_s", self.gradient_interval_s),
            ("accel_g", self.accel_g),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{name} must be > 0, got {v}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GasCalibration {
    pub baseline_co: f64,
    pub baseline_odor: f64,
    pub preheat_s: f64,
    pub sample_count: usize,
}

pub fn calibrate_gas(co: &[f64], odor: &[f64], preheat_s: f64) -> Result<GasCalibration, DetectionError> {
    if co.len() != CALIBRATION_SAMPLES || odor.len() != CALIBRATION_SAMPLES {
        return Err(DetectionError::WrongSampleCount { co: co.len(), odor: odor.len() });
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(GasCalibration {
        baseline_co: mean(co),
        baseline_odor: mean(odor),
        preheat_s,
        sample_count: CALIBRATION_SAMPLES,
    })
}

/// Temperature rise per second across `interval_s`, ending at the newest
/// sample. `window` holds `(seconds, °C)` pairs in time order; the start
/// point is the sample nearest to `newest - interval_s`.
pub fn temp_gradient(window: &[(f64, f64)], interval_s: f64) -> Result<f64, DetectionError> {
    let (Some(first), Some(last)) = (window.first(), window.last()) else {
        return Err(DetectionError::InsufficientWindow { span_s: 0.0, interval_s });
    };
    let span_s = last.0 - first.0;
    if span_s + 1e-9 < interval_s {
        return Err(DetectionError::InsufficientWindow { span_s, interval_s });
    }
    let target = last.0 - interval_s;
    let start = window
        .iter()
        .min_by(|a, b| (a.0 - target).abs().total_cmp(&(b.0 - target).abs()))
        .expect("window is non-empty");
    Ok((last.1 - start.1) / interval_s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GasSnapshot {
    pub co: f64,
    pub odor: f64,
    pub gradient: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DetectionOutcome {
    pub scenario: Option<ScenarioId>,
    pub snapshot: GasSnapshot,
}

/// Fire needs both gas sensors above baseline and a steep temperature rise;
/// odorized gas without the rise is a leak.
pub fn classify_gas_event(
    co: f64,
    odor: f64,
    cal: Option<&GasCalibration>,
    gradient: f64,
    th: &ThresholdSet,
) -> Result<DetectionOutcome, DetectionError> {
    let cal = cal.ok_or(DetectionError::NotCalibrated)?;
    let co_high = co >= cal.baseline_co + th.co_above_baseline;
    let odor_high = odor >= cal.baseline_odor + th.odor_above_baseline;
    let hot = gradient >= th.temp_gradient;
    let scenario = match (co_high, odor_high, hot) {
        (true, true, true) => Some(ScenarioId::Fire),
        (_, true, false) => Some(ScenarioId::GasLeak),
        _ => None,
    };
    Ok(DetectionOutcome { scenario, snapshot: GasSnapshot { co, odor, gradient } })
}

pub fn clip_accel(g: f64) -> f64 {
    g.clamp(-ACCEL_RANGE_G, ACCEL_RANGE_G)
}

/// Largest deviation from rest on any axis; z rests at 1 g.
pub fn accel_deviation(ax: f64, ay: f64, az: f64) -> f64 {
    let (ax, ay, az) = (clip_accel(ax), clip_accel(ay), clip_accel(az));
    ax.abs().max(ay.abs()).max((az - 1.0).abs())
}

pub fn detect_earthquake(ax: f64, ay: f64, az: f64, th: &ThresholdSet) -> bool {
    accel_deviation(ax, ay, az) >= th.accel_g
}

pub fn detect_water(probe: f64) -> bool {
    probe == 1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct IntrusionAssessment {
    pub initiate: bool,
    pub vote: bool,
}

/// Only motion starts a vote; an open door alone counts as a supporting
/// vote but never initiates.
pub fn detect_intrusion(pir: f64, hall_open: f64, armed: bool) -> IntrusionAssessment {
    if !armed {
        return IntrusionAssessment { initiate: false, vote: false };
    }
    let motion = pir == 1.0;
    IntrusionAssessment { initiate: motion, vote: motion || hall_open == 1.0 }
}

/// Samples taken by one node over its vote window.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SensorWindow {
    pub samples: BTreeMap<SensorKind, Vec<f64>>,
    /// Temperature gradient ending at the window's newest sample, if the
    /// node has enough history.
    pub temp_gradient: Option<f64>,
}

impl SensorWindow {
    pub fn mean(&self, kind: SensorKind) -> Option<f64> {
        let v = self.samples.get(&kind).filter(|v| !v.is_empty())?;
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Binary channel seen active at least once in the window.
    pub fn any_high(&self, kind: SensorKind) -> bool {
        self.samples.get(&kind).is_some_and(|v| v.contains(&1.0))
    }

    pub fn accel_deviations(&self) -> Vec<f64> {
        let axis = |k| self.samples.get(&k).map(Vec::as_slice).unwrap_or(&[]);
        let (x, y, z) = (axis(SensorKind::AccelX), axis(SensorKind::AccelY), axis(SensorKind::AccelZ));
        let n = x.len().min(y.len()).min(z.len());
        (0..n).map(|i| accel_deviation(x[i], y[i], z[i])).collect()
    }
}

/// A node's detection configuration and state.
#[derive(Debug, Clone, PartialEq)]
pub struct Detector {
    pub thresholds: ThresholdSet,
    pub calibration: Option<GasCalibration>,
    pub armed: bool,
}

impl Detector {
    pub fn new(thresholds: ThresholdSet) -> Self {
        Self { thresholds, calibration: None, armed: false }
    }

    fn gas(&self, w: &SensorWindow) -> Option<DetectionOutcome> {
        let co = w.mean(SensorKind::Co)?;
        let odor = w.mean(SensorKind::OdorGas)?;
        classify_gas_event(co, odor, self.calibration.as_ref(), w.temp_gradient.unwrap_or(0.0), &self.thresholds).ok()
    }

    fn quake(&self, w: &SensorWindow) -> bool {
        w.accel_deviations().into_iter().any(|d| d >= self.thresholds.accel_g)
    }

    fn intrusion(&self, w: &SensorWindow) -> IntrusionAssessment {
        let flag = |k| if w.any_high(k) { 1.0 } else { 0.0 };
        detect_intrusion(flag(SensorKind::Pir), flag(SensorKind::Hall), self.armed)
    }

    /// Scenarios this window should start a vote for, in a fixed order.
    pub fn triggered(&self, w: &SensorWindow) -> Vec<ScenarioId> {
        let mut out = Vec::new();
        if let Some(s) = self.gas(w).and_then(|o| o.scenario) {
            out.push(s);
        }
        if w.any_high(SensorKind::WaterProbe) {
            out.push(ScenarioId::WaterLeak);
        }
        if self.quake(w) {
            out.push(ScenarioId::Earthquake);
        }
        if self.intrusion(w).initiate {
            out.push(ScenarioId::Intrusion);
        }
        out.sort();
        out
    }

    /// Whether this node votes for `scenario` given the window.
    pub fn vote_predicate(&self, scenario: ScenarioId, w: &SensorWindow) -> bool {
        match scenario {
            ScenarioId::Fire => self.gas(w).is_some_and(|o| o.scenario == Some(ScenarioId::Fire)),
            // the leak vote looks at odorized gas only
            ScenarioId::GasLeak => match (w.mean(SensorKind::OdorGas), &self.calibration) {
                (Some(odor), Some(cal)) => odor >= cal.baseline_odor + self.thresholds.odor_above_baseline,
                _ => false,
            },
            ScenarioId::WaterLeak => w.any_high(SensorKind::WaterProbe),
            ScenarioId::Earthquake => self.quake(w),
            ScenarioId::Intrusion => self.intrusion(w).vote,
        }
    }

    /// The channel whose mean is reported alongside the vote.
    pub fn primary_samples(&self, scenario: ScenarioId, w: &SensorWindow) -> Vec<f64> {
        let kind = match scenario {
            ScenarioId::Fire => SensorKind::Co,
            ScenarioId::GasLeak => SensorKind::OdorGas,
            ScenarioId::WaterLeak => SensorKind::WaterProbe,
            ScenarioId::Earthquake => return w.accel_deviations(),
            ScenarioId::Intrusion => SensorKind::Pir,
        };
        w.samples.get(&kind).cloned().unwrap_or_default()
    }
}
