//! Recorded sensor traces replayed by the environment.

use std::collections::BTreeMap;
use std::io::Read;
use std::sync::Arc;

use thiserror::Error;
use vigil_core::detection::SensorKind;
use vigil_core::SimTime;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TraceError {
    #[error("trace line {line}: {reason}")]
    ParseError { line: u64, reason: String },
    #[error("trace has no column `{0}`")]
    MissingColumn(String),
    #[error("trace is empty")]
    Empty,
}

/// One sampled channel. Lookups hold the previous sample (zero-order hold);
/// before the first sample the first value is used and after the last one
/// the last value is held.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceChannel {
    times: Vec<SimTime>,
    values: Vec<f64>,
}

impl TraceChannel {
    pub fn new(times: Vec<SimTime>, values: Vec<f64>) -> Result<Self, TraceError> {
        if times.is_empty() || times.len() != values.len() {
            return Err(TraceError::Empty);
        }
        if let Some(i) = times.windows(2).position(|w| w[1] < w[0]) {
            return Err(TraceError::ParseError { line: i as u64 + 3, reason: "time goes backwards".into() });
        }
        Ok(Self { times, values })
    }

    pub fn at(&self, t: SimTime) -> f64 {
        match self.times.partition_point(|&x| x <= t) {
            0 => self.values[0],
            i => self.values[i - 1],
        }
    }

    pub fn end(&self) -> SimTime {
        *self.times.last().expect("channel is non-empty")
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn times(&self) -> &[SimTime] {
        &self.times
    }
}

/// All numeric columns of a CSV trace, keyed by header name.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    time_column: String,
    times: Vec<SimTime>,
    columns: BTreeMap<String, Vec<f64>>,
}

impl Trace {
    /// Parses a headered CSV whose `time_column` holds milliseconds.
    pub fn parse(reader: impl Read, time_column: &str) -> Result<Self, TraceError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| TraceError::ParseError { line: 1, reason: e.to_string() })?
            .clone();
        let time_idx = headers
            .iter()
            .position(|h| h == time_column)
            .ok_or_else(|| TraceError::MissingColumn(time_column.to_string()))?;
        let mut times = Vec::new();
        let mut columns: BTreeMap<String, Vec<f64>> = headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != time_idx)
            .map(|(_, h)| (h.to_string(), Vec::new()))
            .collect();
        for record in rdr.records() {
            let record = record.map_err(|e| TraceError::ParseError {
                line: e.position().map_or(0, |p| p.line()),
                reason: e.to_string(),
            })?;
            let line = record.position().map_or(0, |p| p.line());
            let bad = |reason: String| TraceError::ParseError { line, reason };
            for (i, (field, header)) in record.iter().zip(headers.iter()).enumerate() {
                if i == time_idx {
                    let t: f64 = field.parse().map_err(|_| bad(format!("bad time `{field}`")))?;
                    if !(t.is_finite() && t >= 0.0) {
                        return Err(bad(format!("bad time `{field}`")));
                    }
                    let t = t.round() as SimTime;
                    if times.last().is_some_and(|&prev| t < prev) {
                        return Err(bad("time goes backwards".into()));
                    }
                    times.push(t);
                } else {
                    let v: f64 = field.parse().map_err(|_| bad(format!("bad value `{field}` in `{header}`")))?;
                    if !v.is_finite() {
                        return Err(bad(format!("non-finite value in `{header}`")));
                    }
                    columns.get_mut(header).expect("header known").push(v);
                }
            }
        }
        if times.is_empty() {
            return Err(TraceError::Empty);
        }
        Ok(Self { time_column: time_column.to_string(), times, columns })
    }

    pub fn channel(&self, column: &str) -> Result<TraceChannel, TraceError> {
        let values = self.columns.get(column).ok_or_else(|| TraceError::MissingColumn(column.to_string()))?;
        TraceChannel::new(self.times.clone(), values.clone())
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.keys().map(String::as_str)
    }

    pub fn time_column(&self) -> &str {
        &self.time_column
    }
}

/// Reads a trace and maps its columns onto sensor channels.
pub fn load_trace(
    reader: impl Read,
    time_column: &str,
    mapping: &[(&str, SensorKind)],
) -> Result<BTreeMap<SensorKind, TraceChannel>, TraceError> {
    let trace = Trace::parse(reader, time_column)?;
    mapping.iter().map(|&(col, kind)| Ok((kind, trace.channel(col)?))).collect()
}

/// Traces replayed by the `fire_start` and `mass_drop` stimuli, with the
/// offset inside each trace that lines up with the stimulus time.
#[derive(Debug, Clone)]
pub struct TraceSet {
    pub fire: Arc<BTreeMap<SensorKind, TraceChannel>>,
    pub fire_mark_ms: SimTime,
    pub quake: Arc<BTreeMap<SensorKind, TraceChannel>>,
    pub quake_mark_ms: SimTime,
}

pub const FIRE_COLUMNS: [(&str, SensorKind); 2] = [("CO", SensorKind::Co), ("Odor", SensorKind::OdorGas)];
pub const QUAKE_COLUMNS: [(&str, SensorKind); 3] =
    [("X", SensorKind::AccelX), ("Y", SensorKind::AccelY), ("Z", SensorKind::AccelZ)];

/// Ignition in the bundled fire trace; the gas rise follows 9 s later.
pub const FIRE_MARK_MS: SimTime = 30_000;
/// Impact in the bundled mass-drop trace.
pub const QUAKE_MARK_MS: SimTime = 4_000;

const FIRE_CSV: &str = include_str!("../data/smouldering_fire.csv");
const QUAKE_CSV: &str = include_str!("../data/mass_drop.csv");

impl TraceSet {
    pub fn builtin() -> Self {
        let fire = load_trace(FIRE_CSV.as_bytes(), "Time", &FIRE_COLUMNS).expect("bundled fire trace parses");
        let quake = load_trace(QUAKE_CSV.as_bytes(), "Time", &QUAKE_COLUMNS).expect("bundled quake trace parses");
        Self { fire: Arc::new(fire), fire_mark_ms: FIRE_MARK_MS, quake: Arc::new(quake), quake_mark_ms: QUAKE_MARK_MS }
    }
}

impl Default for TraceSet {
    fn default() -> Self {
        Self::builtin()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_order_hold() {
        let c = TraceChannel::new(vec![0, 100, 200], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(c.at(0), 1.0);
        assert_eq!(c.at(99), 1.0);
        assert_eq!(c.at(100), 2.0);
        assert_eq!(c.at(150), 2.0);
        assert_eq!(c.at(10_000), 3.0);
    }

    #[test]
    fn parse_reports_line_and_column() {
        let err = Trace::parse("Time,CO\n0,1\n100,x\n".as_bytes(), "Time").unwrap_err();
        assert_eq!(err, TraceError::ParseError { line: 3, reason: "bad value `x` in `CO`".into() });
        let err = load_trace("Time,CO\n0,1\n".as_bytes(), "Time", &[("Odor", SensorKind::OdorGas)]).unwrap_err();
        assert_eq!(err, TraceError::MissingColumn("Odor".into()));
        let err = Trace::parse("T,CO\n0,1\n".as_bytes(), "Time").unwrap_err();
        assert_eq!(err, TraceError::MissingColumn("Time".into()));
        assert!(matches!(
            Trace::parse("Time,CO\n100,1\n50,2\n".as_bytes(), "Time"),
            Err(TraceError::ParseError { line: 3, .. })
        ));
        assert_eq!(Trace::parse("Time,CO\n".as_bytes(), "Time"), Err(TraceError::Empty));
    }

    #[test]
    fn builtin_traces_shape() {
        let set = TraceSet::builtin();
        let co = &set.fire[&SensorKind::Co];
        let odor = &set.fire[&SensorKind::OdorGas];
        // flat before the rise, well above threshold after it
        assert!((co.at(set.fire_mark_ms) - 400.0).abs() < 15.0);
        assert!((odor.at(set.fire_mark_ms) - 600.0).abs() < 15.0);
        assert!(co.at(60_000) > 1_000.0);
        assert!(odor.at(60_000) > 1_500.0);
        let z = &set.quake[&SensorKind::AccelZ];
        assert!((z.at(1_000) - 1.0).abs() < 0.1);
        let max = z.values().iter().cloned().fold(f64::MIN, f64::max);
        let min = z.values().iter().cloned().fold(f64::MAX, f64::min);
        assert!(max <= 2.0 && min >= -2.0);
        assert!(max - 1.0 > 0.8);
    }
}
