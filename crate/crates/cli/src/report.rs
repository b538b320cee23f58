//! Summaries of one run, as JSON and as a text table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use vigil_core::detection::SensorKind;
use vigil_core::{NodeId, ScenarioId, SimTime};
use vigil_sim::engine::ScenarioOutcome;
use vigil_sim::log::write_jsonl;
use vigil_sim::{MessageCounters, RangeReport, RunOutput, SessionRecord, SimConfig};

use crate::error::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct NodeEnergyRow {
    pub total_mj: f64,
    pub total_s: f64,
    pub average_mw: f64,
    pub cycle_average_mw: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub name: String,
    pub seed: u64,
    pub end_ms: SimTime,
    pub outcomes: BTreeMap<ScenarioId, ScenarioOutcome>,
    pub sessions: Vec<SessionRecord>,
    pub detections: BTreeMap<ScenarioId, SimTime>,
    pub counters: MessageCounters,
    pub energy: BTreeMap<NodeId, NodeEnergyRow>,
    pub sensor_extremes: BTreeMap<SensorKind, (f64, f64)>,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub log_records: usize,
}

impl RunSummary {
    pub fn new(name: &str, out: &RunOutput) -> Self {
        let outcomes = out.outcomes();
        let mut detections = BTreeMap::new();
        for d in &out.detections {
            detections.entry(d.scenario).or_insert(d.time_ms);
        }
        let energy = out
            .energy
            .nodes
            .iter()
            .map(|(id, e)| {
                let row = NodeEnergyRow {
                    total_mj: e.total_mj(),
                    total_s: e.total_s(),
                    average_mw: e.average_mw(),
                    cycle_average_mw: e.cycle_average_mw(),
                };
                (*id, row)
            })
            .collect();
        Self {
            name: name.to_string(),
            seed: out.seed,
            end_ms: out.end_ms,
            false_positives: outcomes.values().filter(|o| o.false_positive).count(),
            false_negatives: outcomes.values().filter(|o| o.false_negative).count(),
            outcomes,
            sessions: out.sessions.clone(),
            detections,
            counters: out.counters.clone(),
            energy,
            sensor_extremes: out.sensor_extremes.clone(),
            log_records: out.log.len(),
        }
    }

    /// Mean of the per-node cycle averages, in mW.
    pub fn mean_cycle_average_mw(&self) -> f64 {
        if self.energy.is_empty() {
            return 0.0;
        }
        self.energy.values().map(|e| e.cycle_average_mw).sum::<f64>() / self.energy.len() as f64
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let ms = |t: Option<SimTime>| t.map_or("-".to_string(), |t| format!("{:.1}", t as f64 / 1000.0));
        let _ = writeln!(s, "run {} (seed {}, {:.1} s)", self.name, self.seed, self.end_ms as f64 / 1000.0);
        let _ = writeln!(s, "\n{:<12} {:>9} {:>9} {:>9} {:>9} {:>9}  flag", "scenario", "occurred", "detected", "accepted", "latency", "decision");
        for (sc, o) in &self.outcomes {
            let flag = if o.false_positive {
                "FP"
            } else if o.false_negative {
                "FN"
            } else {
                ""
            };
            let _ = writeln!(
                s,
                "{:<12} {:>9} {:>9} {:>9} {:>9} {:>9}  {flag}",
                sc.to_string(),
                ms(o.occurred_at),
                ms(self.detections.get(sc).copied()),
                ms(o.first_accept_ms),
                ms(o.latency_ms),
                if o.accepted { "accept" } else if self.sessions.iter().any(|r| r.scenario == *sc) { "reject" } else { "-" },
            );
        }
        if !self.sessions.is_empty() {
            let _ = writeln!(s, "\n{:<8} {:<12} {:>8} {:>8} {:>7} {:>6} {:>6}  cascaded", "session", "scenario", "opened", "decided", "total", "voters", "result");
            for r in &self.sessions {
                let _ = writeln!(
                    s,
                    "{:<8} {:<12} {:>8.1} {:>8.1} {:>7.2} {:>6} {:>6}  {}{}",
                    r.session.to_string(),
                    r.scenario.to_string(),
                    r.opened_at as f64 / 1000.0,
                    r.decided_at as f64 / 1000.0,
                    r.total,
                    r.voters,
                    if r.decision { "accept" } else { "reject" },
                    if r.cascaded { "yes" } else { "no" },
                    if r.rebalanced { " (rebalanced)" } else { "" },
                );
            }
        }
        let k = &self.counters;
        let _ = writeln!(
            s,
            "\nmessages: sent {} (retransmit {}), delivered {}, dropped {}, in flight {}",
            k.sent,
            k.retransmissions,
            k.delivered,
            k.dropped_total(),
            k.in_flight
        );
        for (reason, c) in &k.dropped {
            let _ = writeln!(s, "  dropped {reason}: {c}");
        }
        let _ = writeln!(s, "\n{:<6} {:>12} {:>10} {:>12}", "node", "energy mJ", "avg mW", "cycle mW");
        for (id, e) in &self.energy {
            let _ = writeln!(s, "{:<6} {:>12.1} {:>10.2} {:>12.2}", id.to_string(), e.total_mj, e.average_mw, e.cycle_average_mw);
        }
        if !self.sensor_extremes.is_empty() {
            let _ = writeln!(s, "\nsensor extremes:");
            for (kind, (lo, hi)) in &self.sensor_extremes {
                let _ = writeln!(s, "  {:<12} {lo:>10.3} {hi:>10.3}", kind.as_str());
            }
        }
        let _ = writeln!(s, "\nfalse positives {}, false negatives {}", self.false_positives, self.false_negatives);
        s
    }
}

/// Writes `events.jsonl`, `summary.json`, `summary.txt`, `power.csv` and,
/// when the run replays any trace, per-node `gas.csv` and `accel.csv`.
pub fn write_run(dir: &Path, summary: &RunSummary, out: &RunOutput, config: &SimConfig) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("events.jsonl"))?);
    write_jsonl(&out.log, &mut f)?;
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(summary).map_err(|e| CliError::Internal(e.to_string()))?)?;
    std::fs::write(dir.join("summary.txt"), summary.to_text())?;
    let mut power = String::from("node,stage,seconds,mj\n");
    for (id, e) in &out.energy.nodes {
        for (stage, t) in &e.stages {
            let _ = writeln!(power, "{},{},{:.3},{:.3}", id.0, stage.as_str(), t.seconds, t.mj);
        }
    }
    std::fs::write(dir.join("power.csv"), power)?;
    write_sensor_csvs(dir, config)?;
    Ok(())
}

/// True (noise-free) gas and acceleration seen by each node, every 100 ms.
fn write_sensor_csvs(dir: &Path, config: &SimConfig) -> Result<(), CliError> {
    use vigil_sim::Stimulus;
    let has = |f: fn(&Stimulus) -> bool| config.script.entries().iter().any(|e| f(&e.stimulus));
    let gas = has(|s| matches!(s, Stimulus::FireStart | Stimulus::GasRelease { .. }));
    let quake = has(|s| matches!(s, Stimulus::MassDrop { .. }));
    if !gas && !quake {
        return Ok(());
    }
    let env = vigil_sim::Environment::from_script(&config.script, &config.traces);
    let value = |id, kind, t| env.true_value(id, kind, t).map_err(CliError::from_sim);
    for id in config.topology.node_ids() {
        if gas {
            let mut s = String::from("Time,Odor,CO\n");
            for t in (0..=config.end_ms).step_by(100) {
                let _ = writeln!(s, "{t},{:.3},{:.3}", value(id, SensorKind::OdorGas, t)?, value(id, SensorKind::Co, t)?);
            }
            std::fs::write(dir.join(format!("gas_node{}.csv", id.0)), s)?;
        }
        if quake {
            let mut s = String::from("Time,X,Y,Z\n");
            for t in (0..=config.end_ms).step_by(100) {
                let (x, y, z) = (value(id, SensorKind::AccelX, t)?, value(id, SensorKind::AccelY, t)?, value(id, SensorKind::AccelZ, t)?);
                let _ = writeln!(s, "{t},{x:.4},{y:.4},{z:.4}");
            }
            std::fs::write(dir.join(format!("accel_node{}.csv", id.0)), s)?;
        }
    }
    Ok(())
}

pub fn write_range(dir: &Path, report: &RangeReport) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("range.csv"), report.to_csv())?;
    Ok(())
}

pub fn range_text(name: &str, report: &RangeReport) -> String {
    let mut s = format!("range test {name}: {} messages per loop, {} loops\n", report.messages, report.loops.len());
    let _ = writeln!(s, "{:<10} {:>9} {:>6} {:>6} {:>9}", "stream", "mean", "min", "max", "delivery");
    for (tx, rx) in report.streams() {
        let m = report.summary(tx, rx);
        let _ = writeln!(
            s,
            "{:<10} {:>9.2} {:>6} {:>6} {:>8.2}%",
            format!("{}->{}", tx.0, rx.0),
            m.mean,
            m.min,
            m.max,
            100.0 * m.mean / f64::from(report.messages)
        );
    }
    s
}
