//! Per-SOC median curves: voltage, seconds-per-percent and temperature.
//!
//! Raw values are pooled per level before taking the median, so curves for
//! a union of event sets never involve medians of medians.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::domain::{ChargingEvent, CurveKind, CurvePoint, SocCurve};
use crate::error::Result;
use crate::ingestion::format_f64;

/// Levels backed by fewer values than this are flagged low confidence.
pub const MIN_SUPPORT: usize = 3;

/// Median; the mean of the two middle values for even counts.
pub fn median(values: &mut [f64]) -> Option<f64> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    values.sort_unstable_by(f64::total_cmp);
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    })
}

/// Linear-interpolated quantile of sorted data, `q` in [0, 1].
pub fn quantile_sorted(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupKey {
    #[default]
    Device,
    Model,
}

impl std::str::FromStr for GroupKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "device" | "user" => Ok(GroupKey::Device),
            "model" => Ok(GroupKey::Model),
            other => Err(format!("unknown group key {other:?} (expected device or model)")),
        }
    }
}

impl GroupKey {
    pub fn key_of(&self, event: &ChargingEvent) -> String {
        match self {
            GroupKey::Device => event.user_id.to_string(),
            GroupKey::Model => event.model.to_string(),
        }
    }
}

/// Raw per-level values awaiting aggregation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LevelPool {
    values: BTreeMap<u8, Vec<f64>>,
}

impl LevelPool {
    pub fn push(&mut self, soc: u8, value: f64) {
        self.values.entry(soc).or_default().push(value);
    }

    pub fn merge(&mut self, other: LevelPool) {
        for (soc, mut v) in other.values {
            self.values.entry(soc).or_default().append(&mut v);
        }
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Values at one level, in insertion order.
    pub fn at(&self, soc: u8) -> &[f64] {
        self.values.get(&soc).map_or(&[], Vec::as_slice)
    }

    pub fn into_curve(self, kind: CurveKind) -> SocCurve {
        let mut curve = SocCurve::new(kind);
        for (soc, mut v) in self.values {
            let count = v.len();
            if let Some(value) = median(&mut v) {
                curve.points.insert(soc, CurvePoint { value, count });
            }
        }
        curve
    }

    pub fn voltage<'a>(events: impl IntoIterator<Item = &'a ChargingEvent>) -> Self {
        let mut pool = LevelPool::default();
        for ev in events {
            for s in ev.samples() {
                pool.push(s.soc, f64::from(s.voltage_mv));
            }
        }
        pool
    }

    pub fn temperature<'a>(events: impl IntoIterator<Item = &'a ChargingEvent>) -> Self {
        let mut pool = LevelPool::default();
        for ev in events {
            for s in ev.samples() {
                pool.push(s.soc, s.temperature_c);
            }
        }
        pool
    }

    /// Seconds per percent; a multi-percent step contributes its average to
    /// every level it spans.
    pub fn charge_time<'a>(
        events: impl IntoIterator<Item = &'a ChargingEvent>,
        include_terminal: bool,
    ) -> Self {
        let mut pool = LevelPool::default();
        for ev in events {
            for step in ev.rate_steps(include_terminal) {
                let Some(per_pct) = step.seconds_per_percent() else {
                    continue;
                };
                for soc in step.first.soc + 1..=step.second.soc {
                    pool.push(soc, per_pct);
                }
            }
        }
        pool
    }

    /// C-rates of charging steps keyed by destination level.
    pub fn step_rates<'a>(
        events: impl IntoIterator<Item = &'a ChargingEvent>,
        include_terminal: bool,
    ) -> Self {
        let mut pool = LevelPool::default();
        for ev in events {
            for step in ev.rate_steps(include_terminal) {
                pool.push(step.second.soc, step.c_rate);
            }
        }
        pool
    }

    /// All values for levels in `lo..=hi`.
    pub fn values_in(&self, lo: u8, hi: u8) -> Vec<f64> {
        self.values
            .range(lo..=hi)
            .flat_map(|(_, v)| v.iter().copied())
            .collect()
    }
}

pub fn voltage_curve<'a>(events: impl IntoIterator<Item = &'a ChargingEvent>) -> SocCurve {
    LevelPool::voltage(events).into_curve(CurveKind::Voltage)
}

pub fn charge_time_curve<'a>(
    events: impl IntoIterator<Item = &'a ChargingEvent>,
    include_terminal: bool,
) -> SocCurve {
    LevelPool::charge_time(events, include_terminal).into_curve(CurveKind::ChargeTime)
}

pub fn temperature_curve<'a>(events: impl IntoIterator<Item = &'a ChargingEvent>) -> SocCurve {
    LevelPool::temperature(events).into_curve(CurveKind::Temperature)
}

pub const CURVE_HEADER: [&str; 6] = ["group", "kind", "soc", "value", "count", "low_confidence"];

/// Appends one CSV row per curve level.
pub fn write_curve<W: Write>(
    writer: &mut csv::Writer<W>,
    group: &str,
    curve: &SocCurve,
) -> Result<usize> {
    for (soc, p) in &curve.points {
        writer.write_record([
            group.to_string(),
            curve.kind.to_string(),
            soc.to_string(),
            format_f64(p.value),
            p.count.to_string(),
            (p.count < MIN_SUPPORT).to_string(),
        ])?;
    }
    Ok(curve.points.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{BatterySample, Charger, Health, Screen};
    use crate::segmentation::{segment_user, DEFAULT_TERMINATION_C};

    fn trace(user: &str, per_pct: impl Fn(u8) -> f64, volt: impl Fn(u8) -> i32, temp: f64) -> Vec<BatterySample> {
        let mut t = 0.0;
        (1..=100u8)
            .map(|soc| {
                if soc > 1 {
                    t += per_pct(soc);
                }
                BatterySample {
                    timestamp: t,
                    user_id: user.into(),
                    model: "m".into(),
                    soc,
                    voltage_mv: volt(soc),
                    temperature_c: temp,
                    health: Health::Good,
                    charger: Charger::Ac,
                    charging: true,
                    screen: Screen::Off,
                }
            })
            .collect()
    }

    fn linear(soc: u8) -> i32 {
        3600 + (i32::from(soc) - 1) * 600 / 99
    }

    #[test]
    fn median_definition() {
        assert_eq!(median(&mut []), None);
        assert_eq!(median(&mut [3.0]), Some(3.0));
        assert_eq!(median(&mut [30.0, 50.0, 50.0, 30.0]), Some(40.0));
        assert_eq!(median(&mut [5.0, 1.0, 3.0]), Some(3.0));
    }

    #[test]
    fn single_event_voltage_curve_is_identity() {
        let s = trace("a", |_| 72.0, linear, 29.0);
        let events = segment_user(&s, DEFAULT_TERMINATION_C);
        let curve = voltage_curve(&events);
        assert_eq!(curve.len(), 100);
        for soc in 1..=100u8 {
            assert_eq!(curve.get(soc), Some(f64::from(linear(soc))));
        }
    }

    #[test]
    fn two_events_median_is_midpoint() {
        let a = segment_user(&trace("a", |_| 72.0, linear, 29.0), DEFAULT_TERMINATION_C);
        let b = segment_user(&trace("b", |_| 72.0, |s| linear(s) + 20, 29.0), DEFAULT_TERMINATION_C);
        let curve = voltage_curve(a.iter().chain(&b));
        for soc in 1..=100u8 {
            assert_eq!(curve.get(soc), Some(f64::from(linear(soc)) + 10.0));
        }
    }

    #[test]
    fn flat_charge_time_curve_at_1c() {
        let events = segment_user(&trace("a", |_| 36.0, linear, 29.0), DEFAULT_TERMINATION_C);
        let curve = charge_time_curve(&events, false);
        assert_eq!(curve.len(), 99);
        assert!(curve.points.values().all(|p| p.value == 36.0));
    }

    #[test]
    fn charge_time_even_count_median() {
        let a = segment_user(&trace("a", |_| 30.0, linear, 29.0), DEFAULT_TERMINATION_C);
        let b = segment_user(&trace("b", |_| 50.0, linear, 29.0), DEFAULT_TERMINATION_C);
        let curve = charge_time_curve(a.iter().chain(&b), false);
        assert_eq!(curve.get(50), Some(40.0));
    }

    #[test]
    fn multi_percent_step_covers_every_level() {
        let mut s = trace("a", |_| 72.0, linear, 29.0);
        // drop soc 11 and 12 so that 10 -> 13 is one step of 216 s
        s.retain(|x| x.soc != 11 && x.soc != 12);
        let events = segment_user(&s, DEFAULT_TERMINATION_C);
        let curve = charge_time_curve(&events, false);
        for soc in 11..=13 {
            assert_eq!(curve.get(soc), Some(72.0));
        }
    }

    #[test]
    fn constant_temperature_curve() {
        let events = segment_user(&trace("a", |_| 72.0, linear, 29.0), DEFAULT_TERMINATION_C);
        let curve = temperature_curve(&events);
        assert!(curve.points.values().all(|p| p.value == 29.0 && p.count == 1));
    }

    #[test]
    fn curve_csv_flags_low_support() {
        let events = segment_user(&trace("a", |_| 72.0, linear, 29.0), DEFAULT_TERMINATION_C);
        let curve = voltage_curve(&events);
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CURVE_HEADER).unwrap();
        write_curve(&mut w, "a", &curve).unwrap();
        let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
        assert!(text.lines().nth(1).unwrap().starts_with("a,voltage,1,3600.0,1,true"));
    }
}
