use serde::{Deserialize, Serialize};

use crate::message::ScenarioId;
use crate::node::ProtocolError;
use crate::vote::MajorityRule;

/// One value per emergency scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerScenario<T> {
    pub fire: T,
    pub gas_leak: T,
    pub water_leak: T,
    pub earthquake: T,
    pub intrusion: T,
}

impl<T: Copy> PerScenario<T> {
    pub fn uniform(value: T) -> Self {
        Self { fire: value, gas_leak: value, water_leak: value, earthquake: value, intrusion: value }
    }

    pub fn get(&self, scenario: ScenarioId) -> T {
        match scenario {
            ScenarioId::Fire => self.fire,
            ScenarioId::GasLeak => self.gas_leak,
            ScenarioId::WaterLeak => self.water_leak,
            ScenarioId::Earthquake => self.earthquake,
            ScenarioId::Intrusion => self.intrusion,
        }
    }

    pub fn set(&mut self, scenario: ScenarioId, value: T) {
        match scenario {
            ScenarioId::Fire => self.fire = value,
            ScenarioId::GasLeak => self.gas_leak = value,
            ScenarioId::WaterLeak => self.water_leak = value,
            ScenarioId::Earthquake => self.earthquake = value,
            ScenarioId::Intrusion => self.intrusion = value,
        }
    }
}

/// Deep sleep intervals the firmware supports.
pub const SLEEP_INTERVALS_MS: [u64; 3] = [10_000, 30_000, 60_000];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub node_weight: f64,
    pub required_majority: PerScenario<f64>,
    /// Accept only when the weighted total strictly exceeds the majority.
    pub strict_majority: bool,
    /// Rescale responder weights when expected nodes stay silent.
    pub rebalance: bool,
    pub vote_timeout_ms: u64,
    pub retransmit_interval_ms: u64,
    pub idle_listen_ms: u64,
    pub setup_ms: u64,
    pub sleep_interval_ms: u64,
    pub sample_count: usize,
    pub sample_window_ms: u64,
    /// First sequence number this node hands out.
    pub seq_counter: u32,
    /// After one of its own sessions for a scenario is decided, the node does
    /// not open another one for that scenario for this long.
    pub retrigger_holdoff_ms: u64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            node_weight: 1.0,
            required_majority: PerScenario {
                fire: 2.5,
                gas_leak: 2.5,
                water_leak: 2.5,
                earthquake: 5.0,
                intrusion: 2.0,
            },
            strict_majority: false,
            rebalance: true,
            vote_timeout_ms: 2_000,
            retransmit_interval_ms: 500,
            idle_listen_ms: 5_000,
            setup_ms: 10_000,
            sleep_interval_ms: 60_000,
            sample_count: 10,
            sample_window_ms: 1_000,
            seq_counter: 0,
            retrigger_holdoff_ms: 60_000,
        }
    }
}

impl ProtocolConfig {
    pub fn majority(&self, scenario: ScenarioId) -> MajorityRule {
        MajorityRule { required: self.required_majority.get(scenario), strict: self.strict_majority }
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        let bad = |field: &'static str, reason: String| Err(ProtocolError::InvalidConfig { field, reason });
        if !(self.node_weight.is_finite() && self.node_weight >= 0.0) {
            return bad("node_weight", format!("must be finite and >= 0, got {}", self.node_weight));
        }
        for scenario in ScenarioId::ALL {
            let m = self.required_majority.get(scenario);
            if !(m.is_finite() && m > 0.0) {
                return bad("required_majority", format!("{scenario} must be > 0, got {m}"));
            }
        }
        if self.retransmit_interval_ms == 0 || self.retransmit_interval_ms >= self.vote_timeout_ms {
            return bad(
                "retransmit_interval_ms",
                format!(
                    "must be in 1..vote_timeout_ms ({}), got {}",
                    self.vote_timeout_ms, self.retransmit_interval_ms
                ),
            );
        }
        if !SLEEP_INTERVALS_MS.contains(&self.sleep_interval_ms) {
            return bad(
                "sleep_interval_ms",
                format!("must be one of {SLEEP_INTERVALS_MS:?}, got {}", self.sleep_interval_ms),
            );
        }
        if self.sample_count == 0 {
            return bad("sample_count", "must be >= 1".into());
        }
        if self.sample_window_ms == 0 {
            return bad("sample_window_ms", "must be >= 1".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ProtocolConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_out_of_range_values() {
        let cases: Vec<(ProtocolConfig, &str)> = vec![
            (ProtocolConfig { node_weight: -1.0, ..Default::default() }, "node_weight"),
            (ProtocolConfig { retransmit_interval_ms: 2_000, ..Default::default() }, "retransmit_interval_ms"),
            (ProtocolConfig { sleep_interval_ms: 15_000, ..Default::default() }, "sleep_interval_ms"),
            (ProtocolConfig { sample_count: 0, ..Default::default() }, "sample_count"),
            (
                ProtocolConfig { required_majority: PerScenario::uniform(0.0), ..Default::default() },
                "required_majority",
            ),
        ];
        for (config, field) in cases {
            match config.validate() {
                Err(ProtocolError::InvalidConfig { field: f, .. }) => assert_eq!(f, field),
                other => panic!("expected {field} error, got {other:?}"),
            }
        }
    }

    #[test]
    fn per_scenario_indexing() {
        let mut p = PerScenario::uniform(0);
        p.set(ScenarioId::Earthquake, 3);
        assert_eq!(p.get(ScenarioId::Earthquake), 3);
        assert_eq!(p.get(ScenarioId::Fire), 0);
    }
}
