//! Average power per sleep interval under the stage profile, the model
//! fitted to bench averages, and optionally the simulated ledger.

use std::fmt::Write as _;

use serde::Serialize;
use vigil_core::power::{average_power, fit_cycle_model, lifetime_hours, CycleModel, StageProfile};
use vigil_sim::{run, NodeSetup, SimConfig, StimulusScript, Topology};

use crate::error::CliError;
use crate::presets::eval_protocol;

/// Bench averages in mW at sleep intervals of 10, 30 and 60 s.
pub const OBSERVED: [(f64, f64); 3] = [(10.0, 424.87), (30.0, 378.00), (60.0, 327.21)];
/// Bench average without deep sleep.
pub const OBSERVED_NO_SLEEP_MW: f64 = 719.75;
pub const INTERVALS_S: [u64; 4] = [0, 10, 30, 60];
/// Relative gap to the no-sleep bench value above which the row is flagged.
pub const DEVIATION_FLAG: f64 = 0.10;

#[derive(Debug, Clone, Serialize)]
pub struct PowerRow {
    pub interval_s: u64,
    pub profile_mw: f64,
    pub fitted_mw: f64,
    pub observed_mw: Option<f64>,
    pub simulated_mw: Option<f64>,
    /// Fitted value more than [`DEVIATION_FLAG`] away from the observation.
    pub deviation: Option<f64>,
    pub flagged: bool,
    /// `(capacity_wh, hours)` at the fitted average.
    pub lifetimes_h: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PowerTable {
    pub fitted: CycleModel,
    pub profile_model: CycleModel,
    pub rows: Vec<PowerRow>,
}

/// Parses `T=mW`.
pub fn parse_observation(s: &str) -> Result<(f64, f64), CliError> {
    let bad = || CliError::Usage(format!("observation `{s}` is not T=mW"));
    let (t, p) = s.split_once('=').ok_or_else(bad)?;
    let t: f64 = t.trim().parse().map_err(|_| bad())?;
    let p: f64 = p.trim().parse().map_err(|_| bad())?;
    if !(t.is_finite() && t >= 0.0 && p.is_finite() && p > 0.0) {
        return Err(bad());
    }
    Ok((t, p))
}

/// Cycle average of five idle nodes over an hour at sleep interval `t_s`.
pub fn simulate_idle(profile: &StageProfile, t_s: u64) -> Result<f64, CliError> {
    let mut setup = NodeSetup { protocol: eval_protocol(), ..Default::default() };
    setup.protocol.sleep_interval_ms = t_s * 1_000;
    let topo = Topology::uniform(5, Default::default()).map_err(CliError::from_sim)?;
    let mut c = SimConfig::uniform(topo, setup, StimulusScript::default(), 1, 3_600_000);
    c.profile = *profile;
    c.record_log = false;
    let out = run(&c).map_err(CliError::from_sim)?;
    let n = out.energy.nodes.len() as f64;
    Ok(out.energy.nodes.values().map(|e| e.cycle_average_mw()).sum::<f64>() / n)
}

pub fn power_table(profile: &StageProfile, observed: &[(f64, f64)], capacities_wh: &[f64], simulate: bool) -> Result<PowerTable, CliError> {
    profile.validate().map_err(|e| CliError::Config(e.to_string()))?;
    for &c in capacities_wh {
        if !(c.is_finite() && c > 0.0) {
            return Err(CliError::Usage(format!("capacity must be > 0 Wh, got {c}")));
        }
    }
    let fitted = fit_cycle_model(observed).map_err(|e| CliError::Usage(e.to_string()))?;
    let profile_model = profile.cycle_model();
    let mut rows = Vec::new();
    for t in INTERVALS_S {
        let tf = t as f64;
        let fitted_mw = average_power(&fitted, tf);
        let observed_mw = if t == 0 {
            Some(OBSERVED_NO_SLEEP_MW)
        } else {
            observed.iter().find(|(x, _)| *x == tf).map(|o| o.1)
        };
        let deviation = observed_mw.map(|o| (fitted_mw - o) / o);
        let simulated_mw = if simulate && t > 0 { Some(simulate_idle(profile, t)?) } else { None };
        rows.push(PowerRow {
            interval_s: t,
            profile_mw: average_power(&profile_model, tf),
            fitted_mw,
            observed_mw,
            simulated_mw,
            deviation,
            flagged: deviation.is_some_and(|d| d.abs() > DEVIATION_FLAG),
            lifetimes_h: capacities_wh.iter().map(|&c| (c, lifetime_hours(c, fitted_mw))).collect(),
        });
    }
    Ok(PowerTable { fitted, profile_model, rows })
}

impl PowerTable {
    pub fn to_text(&self) -> String {
        let f = &self.fitted;
        let mut s = format!(
            "fitted cycle: uptime {:.2} s, uptime energy {:.1} mJ, sleep {:.2} mW\n",
            f.uptime_s, f.uptime_energy_mj, f.sleep_mw
        );
        let _ = writeln!(s, "{:>5} {:>10} {:>10} {:>10} {:>10} {:>9}", "T s", "profile", "fitted", "observed", "simulated", "dev");
        for r in &self.rows {
            let opt = |v: Option<f64>| v.map_or("-".into(), |v| format!("{v:.2}"));
            let dev = r.deviation.map_or("-".into(), |d| format!("{:+.1}%", 100.0 * d));
            let _ = write!(
                s,
                "{:>5} {:>10.2} {:>10.2} {:>10} {:>10} {:>9}",
                r.interval_s,
                r.profile_mw,
                r.fitted_mw,
                opt(r.observed_mw),
                opt(r.simulated_mw),
                dev
            );
            if r.flagged {
                s.push_str("  DEVIATES");
            }
            for (c, h) in &r.lifetimes_h {
                let _ = write!(s, "  {c} Wh: {h:.0} h");
            }
            s.push('\n');
        }
        s
    }
}
