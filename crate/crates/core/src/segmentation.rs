//! Charging-rate computation and charging-event segmentation.
//!
//! Consecutive samples are paired into steps, each step gets a C-rate, and a
//! step at or below the termination rate closes the current event. This
//! replaces plug/unplug edge detection, which is unreliable in crowdsourced
//! logs where devices reboot mid-charge.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::{BatterySample, ChargeStep, ChargingEvent, SECONDS_PER_PERCENT_AT_1C};
use crate::error::{Error, Result};
use crate::ingestion::format_f64;

/// Default termination rate.
pub const DEFAULT_TERMINATION_C: f64 = 0.03;
/// Rate at which charge controllers typically stop charging.
pub const CONTROLLER_TERMINATION_C: f64 = 0.07;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentationConfig {
    pub termination_c: f64,
    /// Count closing steps in rate statistics.
    pub include_terminal: bool,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        SegmentationConfig {
            termination_c: DEFAULT_TERMINATION_C,
            include_terminal: false,
        }
    }
}

/// C-rate needed to gain `delta_soc` percent in `delta_t` seconds.
///
/// Non-charging intervals (`delta_soc <= 0`) have rate zero.
pub fn c_rate(delta_soc: i32, delta_t: f64) -> Result<f64> {
    if delta_t.is_nan() || delta_t <= 0.0 {
        return Err(Error::NonPositiveInterval(delta_t));
    }
    if delta_soc <= 0 {
        return Ok(0.0);
    }
    Ok(SECONDS_PER_PERCENT_AT_1C * f64::from(delta_soc) / delta_t)
}

/// Pairs each sample with its successor.
///
/// Input must be time sorted. When several samples share a timestamp only
/// the last of them is paired, so every step has a positive interval.
pub fn pair_consecutive(samples: &[BatterySample]) -> Vec<ChargeStep> {
    let kept: Vec<&BatterySample> = samples
        .iter()
        .enumerate()
        .filter(|(i, s)| {
            samples
                .get(i + 1)
                .is_none_or(|next| next.timestamp != s.timestamp)
        })
        .map(|(_, s)| s)
        .collect();
    kept.windows(2)
        .filter_map(|w| {
            let (a, b) = (w[0], w[1]);
            let delta_t = b.timestamp - a.timestamp;
            let delta_soc = i32::from(b.soc) - i32::from(a.soc);
            let rate = c_rate(delta_soc, delta_t).ok()?;
            Some(ChargeStep {
                first: a.clone(),
                second: b.clone(),
                delta_soc,
                delta_t,
                c_rate: rate,
            })
        })
        .collect()
}

/// True if `step` ends the event it belongs to.
pub fn is_terminator(step: &ChargeStep, termination_c: f64) -> bool {
    step.c_rate <= termination_c
}

/// Groups steps into events; a step with `c_rate <= termination_c` is the
/// last step of its event and the following step opens the next id.
pub fn segment_events(steps: Vec<ChargeStep>, termination_c: f64) -> Vec<ChargingEvent> {
    let mut events = Vec::new();
    let mut current: Vec<ChargeStep> = Vec::new();
    let mut next_id = 1u32;

    let mut flush = |steps: Vec<ChargeStep>, closed: bool, events: &mut Vec<ChargingEvent>| {
        let first = &steps[0].first;
        let last = &steps[steps.len() - 1];
        let end_time = if closed {
            last.first.timestamp
        } else {
            last.second.timestamp
        };
        events.push(ChargingEvent {
            event_id: next_id,
            user_id: first.user_id.clone(),
            model: first.model.clone(),
            start_time: first.timestamp,
            end_time,
            steps,
            closed,
        });
        next_id += 1;
    };

    for step in steps {
        let terminates = is_terminator(&step, termination_c);
        current.push(step);
        if terminates {
            flush(std::mem::take(&mut current), true, &mut events);
        }
    }
    if !current.is_empty() {
        flush(current, false, &mut events);
    }
    events
}

/// Pairs and segments one user's sorted samples.
pub fn segment_user(samples: &[BatterySample], termination_c: f64) -> Vec<ChargingEvent> {
    segment_events(pair_consecutive(samples), termination_c)
}

/// Event voltage endpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Endpoints {
    /// Voltage of the lowest-soc sample.
    pub initial_voltage: i32,
    /// Voltage of the highest-soc sample.
    pub final_voltage: i32,
    pub soc_span: (u8, u8),
    /// `final_voltage` when the event reached 100%.
    pub full_charge_voltage: Option<i32>,
}

/// Endpoints of an event; ties on soc resolve to the earliest sample.
pub fn event_endpoints(event: &ChargingEvent) -> Option<Endpoints> {
    let mut iter = event.samples();
    let first = iter.next()?;
    let (mut lo, mut hi) = (first, first);
    for s in iter {
        if s.soc < lo.soc {
            lo = s;
        }
        if s.soc > hi.soc {
            hi = s;
        }
    }
    Some(Endpoints {
        initial_voltage: lo.voltage_mv,
        final_voltage: hi.voltage_mv,
        soc_span: (lo.soc, hi.soc),
        full_charge_voltage: (hi.soc == 100).then_some(hi.voltage_mv),
    })
}

/// One record of the per-sample label stream.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleLabel {
    pub event_id: u32,
    pub delta_t: f64,
    pub c_rate: f64,
    pub timestamp: f64,
    pub soc: u8,
}

/// The per-sample label stream: two records per pair, where a slow pair
/// labels its earlier sample with the old event's rate and its later sample
/// as the zero-rate opener of the next event.
pub fn algorithm_labels(steps: &[ChargeStep], termination_c: f64) -> Vec<SampleLabel> {
    let mut out = Vec::with_capacity(steps.len() * 2);
    let mut event = 1u32;
    let label = |event_id, delta_t, c_rate, s: &BatterySample| SampleLabel {
        event_id,
        delta_t,
        c_rate,
        timestamp: s.timestamp,
        soc: s.soc,
    };
    for step in steps {
        if is_terminator(step, termination_c) {
            out.push(label(event, step.delta_t, step.c_rate, &step.first));
            event += 1;
            out.push(label(event, 0.0, 0.0, &step.second));
        } else {
            out.push(label(event, 0.0, 0.0, &step.first));
            out.push(label(event, step.delta_t, step.c_rate, &step.second));
        }
    }
    out
}

pub const LABELED_STEP_HEADER: [&str; 8] =
    ["user", "event_id", "t1", "t2", "soc1", "soc2", "delta_t", "c_rate"];

/// Appends one CSV row per step; the caller writes [`LABELED_STEP_HEADER`].
pub fn write_labeled_steps<W: Write>(
    writer: &mut csv::Writer<W>,
    events: &[ChargingEvent],
) -> Result<usize> {
    let mut rows = 0;
    for ev in events {
        for step in &ev.steps {
            writer.write_record([
                ev.user_id.to_string(),
                ev.event_id.to_string(),
                format_f64(step.first.timestamp),
                format_f64(step.second.timestamp),
                step.first.soc.to_string(),
                step.second.soc.to_string(),
                format_f64(step.delta_t),
                format_f64(step.c_rate),
            ])?;
            rows += 1;
        }
    }
    Ok(rows)
}

/// Per-step rates, or one mean rate per event when `per_event_mean` is set.
pub fn rate_samples(
    events: &[ChargingEvent],
    include_terminal: bool,
    per_event_mean: bool,
) -> Vec<(Arc<str>, u32, f64)> {
    let mut out = Vec::new();
    for ev in events {
        let rates: Vec<f64> = ev.rate_steps(include_terminal).map(|s| s.c_rate).collect();
        if per_event_mean {
            if !rates.is_empty() {
                let mean = rates.iter().sum::<f64>() / rates.len() as f64;
                out.push((ev.user_id.clone(), ev.event_id, mean));
            }
        } else {
            out.extend(rates.into_iter().map(|r| (ev.user_id.clone(), ev.event_id, r)));
        }
    }
    out
}
