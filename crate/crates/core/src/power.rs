//! Energy accounting per duty-cycle stage and the three-parameter cycle
//! model used to reason about average power and battery lifetime.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::message::NodeId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PowerError {
    #[error("cycle fit needs at least 3 observations with distinct sleep intervals, got {0}")]
    SingularSystem(usize),
    #[error("invalid stage profile: {0}")]
    InvalidProfile(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Setup,
    /// Radio power-up spike at the start of every uptime.
    RadioPeak,
    Listen,
    Active,
    DeepSleep,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Setup, Stage::RadioPeak, Stage::Listen, Stage::Active, Stage::DeepSleep];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Setup => "setup",
            Stage::RadioPeak => "radio_peak",
            Stage::Listen => "listen",
            Stage::Active => "active",
            Stage::DeepSleep => "deep_sleep",
        }
    }
}

/// Power draw of each stage as observed on the bench.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageProfile {
    pub setup_mw: f64,
    pub setup_s: f64,
    pub wifi_peak_mw: f64,
    pub peak_s: f64,
    pub listen_mw: f64,
    pub listen_s: f64,
    pub active_mw: f64,
    pub sleep_mw: f64,
}

impl Default for StageProfile {
    fn default() -> Self {
        Self {
            setup_mw: 425.0,
            setup_s: 10.0,
            wifi_peak_mw: 2000.0,
            peak_s: 0.5,
            listen_mw: 750.0,
            listen_s: 5.0,
            active_mw: 750.0,
            sleep_mw: 250.0,
        }
    }
}

impl StageProfile {
    pub fn power_mw(&self, stage: Stage) -> f64 {
        match stage {
            Stage::Setup => self.setup_mw,
            Stage::RadioPeak => self.wifi_peak_mw,
            Stage::Listen => self.listen_mw,
            Stage::Active => self.active_mw,
            Stage::DeepSleep => self.sleep_mw,
        }
    }

    pub fn validate(&self) -> Result<(), PowerError> {
        for stage in Stage::ALL {
            let p = self.power_mw(stage);
            if !(p.is_finite() && p > 0.0) {
                return Err(PowerError::InvalidProfile(format!("{} power must be > 0, got {p}", stage.as_str())));
            }
        }
        for (name, d) in [("setup_s", self.setup_s), ("peak_s", self.peak_s), ("listen_s", self.listen_s)] {
            if !(d.is_finite() && d >= 0.0) {
                return Err(PowerError::InvalidProfile(format!("{name} must be >= 0, got {d}")));
            }
        }
        Ok(())
    }

    /// One idle cycle as a [`CycleModel`]: the uptime is `listen_s` long and
    /// its first `peak_s` are drawn at the radio peak.
    pub fn cycle_model(&self) -> CycleModel {
        let peak = self.peak_s.min(self.listen_s);
        CycleModel {
            uptime_energy_mj: peak * self.wifi_peak_mw + (self.listen_s - peak) * self.listen_mw,
            uptime_s: self.listen_s,
            sleep_mw: self.sleep_mw,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct StageTotals {
    pub mj: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct NodeEnergy {
    pub stages: BTreeMap<Stage, StageTotals>,
}

impl NodeEnergy {
    pub fn total_mj(&self) -> f64 {
        self.stages.values().map(|s| s.mj).sum()
    }

    pub fn total_s(&self) -> f64 {
        self.stages.values().map(|s| s.seconds).sum()
    }

    pub fn average_mw(&self) -> f64 {
        let s = self.total_s();
        if s > 0.0 {
            self.total_mj() / s
        } else {
            0.0
        }
    }

    /// Average over everything but the one-off setup stage.
    pub fn cycle_average_mw(&self) -> f64 {
        let (mj, s) = self
            .stages
            .iter()
            .filter(|(st, _)| **st != Stage::Setup)
            .fold((0.0, 0.0), |(mj, s), (_, t)| (mj + t.mj, s + t.seconds));
        if s > 0.0 {
            mj / s
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct EnergyLedger {
    pub nodes: BTreeMap<NodeId, NodeEnergy>,
}

impl EnergyLedger {
    pub fn node(&self, id: NodeId) -> Option<&NodeEnergy> {
        self.nodes.get(&id)
    }

    /// Merges `other` into `self`, summing per stage.
    pub fn absorb(&mut self, other: &EnergyLedger) {
        for (id, energy) in &other.nodes {
            let mine = self.nodes.entry(*id).or_default();
            for (stage, t) in &energy.stages {
                let e = mine.stages.entry(*stage).or_default();
                e.mj += t.mj;
                e.seconds += t.seconds;
            }
        }
    }
}

/// Adds `duration_s` of `stage` at the profile's power to the ledger and
/// returns the millijoules added.
pub fn record_stage(ledger: &mut EnergyLedger, node: NodeId, stage: Stage, duration_s: f64, profile: &StageProfile) -> f64 {
    let mj = duration_s * profile.power_mw(stage);
    let e = ledger.nodes.entry(node).or_default().stages.entry(stage).or_default();
    e.mj += mj;
    e.seconds += duration_s;
    mj
}

/// Uptime energy, uptime length and sleep power of one duty cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CycleModel {
    pub uptime_energy_mj: f64,
    pub uptime_s: f64,
    pub sleep_mw: f64,
}

/// Average power over one cycle of uptime followed by `sleep_interval_s`
/// of deep sleep.
pub fn average_power(model: &CycleModel, sleep_interval_s: f64) -> f64 {
    let t = sleep_interval_s;
    let denom = model.uptime_s + t;
    if denom <= 0.0 {
        return model.sleep_mw;
    }
    (model.uptime_energy_mj + model.sleep_mw * t) / denom
}

/// Recovers a [`CycleModel`] from `(sleep_interval_s, average_mw)` pairs by
/// solving `E + P*T_i = avg_i * (U + T_i)` for `(E, U, P)`: exactly for
/// three points, in the least-squares sense for more.
pub fn fit_cycle_model(observations: &[(f64, f64)]) -> Result<CycleModel, PowerError> {
    let mut intervals: Vec<f64> = observations.iter().map(|o| o.0).collect();
    intervals.sort_by(f64::total_cmp);
    intervals.dedup();
    if intervals.len() < 3 {
        return Err(PowerError::SingularSystem(intervals.len()));
    }
    let n = observations.len();
    // unknowns: E (uptime energy), U (uptime seconds), P (sleep power)
    let a = DMatrix::from_fn(n, 3, |r, c| {
        let (t, avg) = observations[r];
        match c {
            0 => 1.0,
            1 => -avg,
            _ => t,
        }
    });
    let b = DVector::from_iterator(n, observations.iter().map(|&(t, avg)| avg * t));
    let svd = a.svd(true, true);
    let max_sv = svd.singular_values.max();
    if svd.singular_values.min() <= max_sv * 1e-12 {
        return Err(PowerError::SingularSystem(intervals.len()));
    }
    let x = svd.solve(&b, max_sv * 1e-12).map_err(|_| PowerError::SingularSystem(intervals.len()))?;
    Ok(CycleModel { uptime_energy_mj: x[0], uptime_s: x[1], sleep_mw: x[2] })
}

pub fn lifetime_hours(capacity_wh: f64, avg_mw: f64) -> f64 {
    capacity_wh * 1000.0 / avg_mw
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn sleep_only_limit() {
        let m = CycleModel { uptime_energy_mj: 0.0, uptime_s: 0.0, sleep_mw: 250.0 };
        for t in [0.0, 1.0, 60.0, 1e6] {
            assert_eq!(average_power(&m, t), 250.0);
        }
    }

    #[test]
    fn no_sleep_is_uptime_average() {
        let m = CycleModel { uptime_energy_mj: 8000.0, uptime_s: 16.0, sleep_mw: 250.0 };
        assert_eq!(average_power(&m, 0.0), 500.0);
    }

    #[test]
    fn synthetic_round_trip() {
        let truth = CycleModel { uptime_energy_mj: 8000.0, uptime_s: 15.0, sleep_mw: 250.0 };
        let obs: Vec<(f64, f64)> = [10.0, 30.0, 60.0].iter().map(|&t| (t, average_power(&truth, t))).collect();
        let fit = fit_cycle_model(&obs).unwrap();
        assert!(rel(fit.uptime_energy_mj, 8000.0) < 1e-6);
        assert!(rel(fit.uptime_s, 15.0) < 1e-6);
        assert!(rel(fit.sleep_mw, 250.0) < 1e-6);
    }

    #[test]
    fn bench_averages_reproduced() {
        let obs = [(10.0, 424.87), (30.0, 378.00), (60.0, 327.21)];
        let fit = fit_cycle_model(&obs).unwrap();
        for (t, avg) in obs {
            assert!(rel(average_power(&fit, t), avg) < 0.005);
        }
        // the fit puts the uptime near two minutes
        assert!((fit.uptime_s - 120.0).abs() < 1.0, "{fit:?}");
    }

    #[test]
    fn least_squares_with_extra_points() {
        let truth = CycleModel { uptime_energy_mj: 5000.0, uptime_s: 10.0, sleep_mw: 100.0 };
        let obs: Vec<(f64, f64)> = [5.0, 10.0, 30.0, 60.0, 120.0].iter().map(|&t| (t, average_power(&truth, t))).collect();
        let fit = fit_cycle_model(&obs).unwrap();
        assert!(rel(fit.sleep_mw, 100.0) < 1e-6);
    }

    #[test]
    fn underdetermined_fit() {
        assert_eq!(fit_cycle_model(&[(10.0, 424.87), (30.0, 378.0)]), Err(PowerError::SingularSystem(2)));
        assert_eq!(
            fit_cycle_model(&[(10.0, 424.87), (10.0, 424.87), (30.0, 378.0)]),
            Err(PowerError::SingularSystem(2))
        );
    }

    #[test]
    fn lifetimes() {
        assert!((lifetime_hours(32.721, 327.21) - 100.0).abs() < 1e-9);
        assert!((lifetime_hours(107.98, 327.21) - 330.0).abs() < 0.05);
        let sleep_only = lifetime_hours(107.98, 250.0);
        assert!((sleep_only - 431.92).abs() < 0.01);
        assert!(rel(sleep_only, 450.0) < 0.10);
    }

    #[test]
    fn stage_records() {
        let p = StageProfile::default();
        let mut l = EnergyLedger::default();
        assert_eq!(record_stage(&mut l, NodeId(1), Stage::Setup, 10.0, &p), 4250.0);
        assert_eq!(record_stage(&mut l, NodeId(1), Stage::DeepSleep, 60.0, &p), 15000.0);
        let n = l.node(NodeId(1)).unwrap();
        assert_eq!(n.total_mj(), 19250.0);
        assert_eq!(n.total_s(), 70.0);
    }

    #[test]
    fn profile_cycle_close_to_bench() {
        let m = StageProfile::default().cycle_model();
        for (t, avg) in [(10.0, 424.87), (30.0, 378.00), (60.0, 327.21)] {
            assert!(rel(average_power(&m, t), avg) < 0.15, "T={t}: {}", average_power(&m, t));
        }
    }

    proptest! {
        #[test]
        fn decreasing_when_sleep_is_cheaper(e in 100.0f64..1e5, u in 0.5f64..200.0, frac in 0.01f64..0.99, t in 0.0f64..1e4) {
            let m = CycleModel { uptime_energy_mj: e, uptime_s: u, sleep_mw: e / u * frac };
            prop_assert!(average_power(&m, t + 1.0) < average_power(&m, t));
        }

        #[test]
        fn ledger_additive(a in prop::collection::vec((0usize..5, 0.0f64..100.0), 0..20), b in prop::collection::vec((0usize..5, 0.0f64..100.0), 0..20)) {
            let p = StageProfile::default();
            let mut la = EnergyLedger::default();
            let mut lb = EnergyLedger::default();
            let mut both = EnergyLedger::default();
            for &(s, d) in &a {
                record_stage(&mut la, NodeId(1), Stage::ALL[s], d, &p);
                record_stage(&mut both, NodeId(1), Stage::ALL[s], d, &p);
            }
            for &(s, d) in &b {
                record_stage(&mut lb, NodeId(1), Stage::ALL[s], d, &p);
                record_stage(&mut both, NodeId(1), Stage::ALL[s], d, &p);
            }
            la.absorb(&lb);
            let total = |l: &EnergyLedger| l.node(NodeId(1)).map_or(0.0, NodeEnergy::total_mj);
            prop_assert!((total(&la) - total(&both)).abs() < 1e-6);
        }

        #[test]
        fn lifetime_homogeneous(c in 0.1f64..1e3, p in 1.0f64..1e4) {
            prop_assert!(rel(lifetime_hours(2.0 * c, p), 2.0 * lifetime_hours(c, p)) < 1e-12);
        }
    }
}
