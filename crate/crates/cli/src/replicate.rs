//! The same configuration over many seeds.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};
use vigil_core::ScenarioId;
use vigil_sim::{range_test, run};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::report::RunSummary;

/// Mean, sample standard deviation and two-sided 95% Student-t interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub ci95: (f64, f64),
}

impl Stat {
    pub fn of(xs: &[f64]) -> Option<Self> {
        let n = xs.len();
        if n == 0 {
            return None;
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return Some(Self { n, mean, std: 0.0, ci95: (mean, mean) });
        }
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let std = var.sqrt();
        let t = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("df >= 1").inverse_cdf(0.975);
        let half = t * std / (n as f64).sqrt();
        Some(Self { n, mean, std, ci95: (mean - half, mean + half) })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioStats {
    /// Fraction of seeds that accepted the scenario.
    pub accepted_rate: f64,
    /// Over seeds that accepted and where the scenario occurred.
    pub latency_ms: Option<Stat>,
    pub false_positives: usize,
    pub false_negatives: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Replication {
    pub name: String,
    pub seeds: Vec<u64>,
    pub scenarios: BTreeMap<ScenarioId, ScenarioStats>,
    pub sent: Option<Stat>,
    pub delivered: Option<Stat>,
    pub dropped: Option<Stat>,
    pub mean_cycle_average_mw: Option<Stat>,
    /// Range configurations only: received / sent per stream, one value per
    /// seed averaged over loops.
    pub delivery_rate: BTreeMap<String, Stat>,
    #[serde(skip)]
    pub runs: Vec<RunSummary>,
}

pub fn replicate(config: &RunConfig, seeds: &[u64]) -> Result<Replication, CliError> {
    if seeds.is_empty() {
        return Err(CliError::Usage("at least one seed is required".into()));
    }
    if let Some(spec) = &config.range {
        let topo = config.topology()?;
        let reports = seeds
            .par_iter()
            .map(|&s| range_test(&topo, spec, s).map_err(CliError::from_sim))
            .collect::<Result<Vec<_>, _>>()?;
        let mut delivery_rate = BTreeMap::new();
        for (tx, rx) in spec.streams() {
            let xs: Vec<f64> = reports.iter().map(|r| r.summary(tx, rx).mean / f64::from(spec.messages)).collect();
            delivery_rate.insert(format!("{}->{}", tx.0, rx.0), Stat::of(&xs).expect("non-empty"));
        }
        return Ok(Replication {
            name: config.name.clone(),
            seeds: seeds.to_vec(),
            scenarios: BTreeMap::new(),
            sent: None,
            delivered: None,
            dropped: None,
            mean_cycle_average_mw: None,
            delivery_rate,
            runs: Vec::new(),
        });
    }
    let mut quiet = config.clone();
    quiet.record_log = false;
    let sims = seeds.iter().map(|&s| quiet.sim_config(s)).collect::<Result<Vec<_>, _>>()?;
    let runs: Vec<RunSummary> = sims
        .par_iter()
        .map(|c| run(c).map(|o| RunSummary::new(&config.name, &o)).map_err(CliError::from_sim))
        .collect::<Result<_, _>>()?;
    let col = |f: &dyn Fn(&RunSummary) -> f64| Stat::of(&runs.iter().map(f).collect::<Vec<_>>());
    let scenarios = ScenarioId::ALL
        .into_iter()
        .map(|sc| {
            let os: Vec<_> = runs.iter().map(|r| &r.outcomes[&sc]).collect();
            let lat: Vec<f64> = os.iter().filter_map(|o| o.latency_ms).map(|l| l as f64).collect();
            let st = ScenarioStats {
                accepted_rate: os.iter().filter(|o| o.accepted).count() as f64 / os.len() as f64,
                latency_ms: Stat::of(&lat),
                false_positives: os.iter().filter(|o| o.false_positive).count(),
                false_negatives: os.iter().filter(|o| o.false_negative).count(),
            };
            (sc, st)
        })
        .collect();
    Ok(Replication {
        name: config.name.clone(),
        seeds: seeds.to_vec(),
        scenarios,
        sent: col(&|r| r.counters.sent as f64),
        delivered: col(&|r| r.counters.delivered as f64),
        dropped: col(&|r| r.counters.dropped_total() as f64),
        mean_cycle_average_mw: col(&|r| r.mean_cycle_average_mw()),
        delivery_rate: BTreeMap::new(),
        runs,
    })
}

impl Replication {
    pub fn to_text(&self) -> String {
        let mut s = format!("replicate {} over {} seeds\n", self.name, self.seeds.len());
        let fmt = |st: &Stat| format!("{:.3} ± {:.3} [{:.3}, {:.3}]", st.mean, st.std, st.ci95.0, st.ci95.1);
        if !self.delivery_rate.is_empty() {
            for (k, st) in &self.delivery_rate {
                let _ = writeln!(s, "delivery {k}: {}", fmt(st));
            }
            return s;
        }
        let _ = writeln!(s, "{:<12} {:>9} {:>4} {:>4}  latency ms", "scenario", "accepted", "FP", "FN");
        for (sc, st) in &self.scenarios {
            let lat = st.latency_ms.as_ref().map_or("-".into(), fmt);
            let _ = writeln!(s, "{:<12} {:>8.1}% {:>4} {:>4}  {lat}", sc.to_string(), 100.0 * st.accepted_rate, st.false_positives, st.false_negatives);
        }
        for (name, st) in [("sent", &self.sent), ("delivered", &self.delivered), ("dropped", &self.dropped), ("avg mW", &self.mean_cycle_average_mw)] {
            if let Some(st) = st {
                let _ = writeln!(s, "{name:<10} {}", fmt(st));
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stat_matches_hand_computation() {
        // 1..=5: mean 3, sample var 2.5; t(0.975, 4) = 2.776445
        let st = Stat::of(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(st.mean, 3.0);
        assert!((st.std - 2.5f64.sqrt()).abs() < 1e-12);
        let half = 2.776445 * 2.5f64.sqrt() / 5f64.sqrt();
        assert!((st.ci95.1 - 3.0 - half).abs() < 1e-5, "{st:?}");
        assert!((st.ci95.0 - 3.0 + half).abs() < 1e-5);
        let one = Stat::of(&[7.0]).unwrap();
        assert_eq!(one.ci95, (7.0, 7.0));
        assert!(Stat::of(&[]).is_none());
    }
}
