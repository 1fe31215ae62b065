//! User-side charging inefficiencies: SOC fluctuation while the device is in
//! use, and staying plugged in after the battery is full.
//!
//! Both scans run on raw, time-sorted samples. Segmentation would split a
//! 5↑6↓5↑6 pattern at every drop, so fluctuation has to be found first.

use serde::{Deserialize, Serialize};

use crate::domain::{
    BatterySample, BehaviorReport, ChargingEvent, FluctuationEpisode,
    FullPluggedEpisode, Screen,
};
use crate::segmentation::{segment_user, DEFAULT_TERMINATION_C};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BehaviorConfig {
    /// Nominal battery capacity; wasted energy is only estimated when set.
    pub capacity_mah: Option<f64>,
    /// Percent recharged per maintenance cycle.
    pub maintenance_pct_per_cycle: f64,
    /// Minimum reversals for a fluctuation episode.
    pub min_reversals: u32,
    /// Termination rate used to attach event ids to episodes; follows the
    /// segmentation setting.
    #[serde(skip)]
    pub termination_c: f64,
}

impl Default for BehaviorConfig {
    fn default() -> Self {
        BehaviorConfig {
            capacity_mah: None,
            maintenance_pct_per_cycle: 1.5,
            min_reversals: 2,
            termination_c: DEFAULT_TERMINATION_C,
        }
    }
}

/// A maximal run of samples at one level.
struct LevelRun {
    soc: u8,
    first: usize,
    last: usize,
}

fn level_runs(samples: &[BatterySample]) -> Vec<LevelRun> {
    let mut runs: Vec<LevelRun> = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        match runs.last_mut() {
            Some(r) if r.soc == s.soc => r.last = i,
            _ => runs.push(LevelRun {
                soc: s.soc,
                first: i,
                last: i,
            }),
        }
    }
    runs
}

/// Finds runs where the level alternates between two adjacent values with
/// at least `min_reversals` direction changes.
///
/// An episode spans from the last sample before the first move to the first
/// sample of the final level. Episodes never share samples.
pub fn detect_fluctuation(samples: &[BatterySample], min_reversals: u32) -> Vec<FluctuationEpisode> {
    let runs = level_runs(samples);
    let mut out = Vec::new();
    let mut i = 0;
    while i + 1 < runs.len() {
        let (a, b) = (runs[i].soc, runs[i + 1].soc);
        if a.abs_diff(b) != 1 {
            i += 1;
            continue;
        }
        let mut j = i + 1;
        while j + 1 < runs.len() && (runs[j + 1].soc == a || runs[j + 1].soc == b) {
            j += 1;
        }
        let reversals = (j - i - 1) as u32;
        if reversals < min_reversals.max(1) {
            i += 1;
            continue;
        }
        let start = runs[i].last;
        let end = runs[j].first;
        let span = &samples[start..=end];
        out.push(FluctuationEpisode {
            event_id: None,
            soc_low: a.min(b),
            soc_high: a.max(b),
            repetitions: reversals,
            start_time: samples[start].timestamp,
            end_time: samples[end].timestamp,
            total_duration_s: samples[end].timestamp - samples[start].timestamp,
            active_use: span.iter().any(|s| s.screen == Screen::On),
        });
        i = j + 1;
    }
    out
}

/// Sets each episode's event id to the event whose span contains its start.
pub fn attach_event_ids(episodes: &mut [FluctuationEpisode], events: &[ChargingEvent]) {
    for ep in episodes {
        ep.event_id = events
            .iter()
            .find(|ev| ev.start_time <= ep.start_time && ep.start_time <= ev.end_time)
            .map(|ev| ev.event_id);
    }
}

/// Finds periods where the device stayed on the charger at 100%.
///
/// An episode opens at a plugged-in sample at 100% and runs through the
/// last consecutive plugged-in sample. A dip to 98 or 99 followed by a
/// return to 100 counts as one maintenance cycle. Zero-length episodes are
/// dropped.
pub fn detect_full_plugged(samples: &[BatterySample]) -> Vec<FullPluggedEpisode> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < samples.len() {
        if !(samples[i].soc == 100 && samples[i].charging) {
            i += 1;
            continue;
        }
        let start = i;
        let mut end = i;
        let mut cycles = 0u32;
        let mut dip_min: Option<u8> = None;
        while end + 1 < samples.len() && samples[end + 1].charging {
            end += 1;
            let soc = samples[end].soc;
            if soc < 100 {
                dip_min = Some(dip_min.map_or(soc, |m| m.min(soc)));
            } else if let Some(m) = dip_min.take() {
                if m >= 98 {
                    cycles += 1;
                }
            }
        }
        let duration = samples[end].timestamp - samples[start].timestamp;
        if duration > 0.0 {
            out.push(FullPluggedEpisode {
                start_time: samples[start].timestamp,
                end_time: samples[end].timestamp,
                duration_s: duration,
                maintenance_cycles: cycles,
            });
        }
        i = end + 1;
    }
    out
}

/// Charge drawn by maintenance cycles, in mAh.
pub fn estimate_wasted_energy(
    episode: &FullPluggedEpisode,
    nominal_capacity_mah: f64,
    maintenance_pct_per_cycle: f64,
) -> f64 {
    f64::from(episode.maintenance_cycles) * (maintenance_pct_per_cycle / 100.0) * nominal_capacity_mah
}

/// A bounce against 100% inside an at-full episode is the charger's
/// maintenance cycling, already counted there.
fn is_maintenance(ep: &FluctuationEpisode, full: &[FullPluggedEpisode]) -> bool {
    ep.soc_high == 100
        && full
            .iter()
            .any(|f| ep.start_time <= f.end_time && f.start_time <= ep.end_time)
}

/// Runs both scans over one user's raw samples.
pub fn analyze_user(samples: &[BatterySample], cfg: &BehaviorConfig) -> Option<BehaviorReport> {
    let first = samples.first()?;
    let full = detect_full_plugged(samples);
    let mut fluctuation = detect_fluctuation(samples, cfg.min_reversals);
    fluctuation.retain(|ep| !is_maintenance(ep, &full));
    if !fluctuation.is_empty() {
        let events = segment_user(samples, cfg.termination_c);
        attach_event_ids(&mut fluctuation, &events);
    }
    let wasted = cfg.capacity_mah.map(|cap| {
        full.iter()
            .map(|ep| estimate_wasted_energy(ep, cap, cfg.maintenance_pct_per_cycle))
            .sum()
    });
    Some(BehaviorReport {
        user_id: first.user_id.clone(),
        model: first.model.clone(),
        fluctuation_episodes: fluctuation,
        full_plugged_episodes: full,
        wasted_energy_estimate: wasted,
    })
}
