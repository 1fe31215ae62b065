//! Charging technique, charging variants, fuel-gauge type, capacity loss and
//! health tabulation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::curves::{median, quantile_sorted, LevelPool};
use crate::domain::{BatterySample, ChargingEvent, FuelGauge, Health, SocCurve, Technique, Variant};
use crate::error::{Error, Result};

/// Final-voltage bands separating CC-CV from DLC, plus the Quick ceiling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TechniqueBands {
    pub cccv_center: f64,
    pub dlc_center: f64,
    pub half_width: f64,
    /// Peak voltage strictly above this means Quick charging.
    pub quick_threshold: f64,
}

impl Default for TechniqueBands {
    fn default() -> Self {
        TechniqueBands {
            cccv_center: 4200.0,
            dlc_center: 4350.0,
            half_width: 50.0,
            quick_threshold: 4400.0,
        }
    }
}

impl TechniqueBands {
    pub fn validate(&self) -> Result<()> {
        let disjoint = self.cccv_center + self.half_width < self.dlc_center - self.half_width;
        let quick_above = self.quick_threshold >= self.dlc_center + self.half_width;
        if self.half_width < 0.0 || !disjoint || !quick_above {
            return Err(Error::Config(
                "technique bands must be disjoint and below the quick threshold".into(),
            ));
        }
        Ok(())
    }

    pub fn band_of(&self, voltage: f64) -> Option<Technique> {
        if (voltage - self.cccv_center).abs() <= self.half_width {
            Some(Technique::CcCv)
        } else if (voltage - self.dlc_center).abs() <= self.half_width {
            Some(Technique::Dlc)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PulseConfig {
    pub min_reversals: u32,
    /// Smallest level-to-level change counted, millivolts.
    pub min_amplitude: f64,
    /// Running-median width applied before differencing; 1 disables it.
    pub smoothing_window: usize,
    pub soc_window: (u8, u8),
    pub min_levels: usize,
}

impl Default for PulseConfig {
    fn default() -> Self {
        PulseConfig {
            min_reversals: 4,
            min_amplitude: 20.0,
            smoothing_window: 3,
            soc_window: (30, 95),
            min_levels: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FuelGaugeConfig {
    /// IQR/median at or below this is a Coulomb counter; above twice this is
    /// voltage based.
    pub cv_threshold: f64,
    pub soc_window: (u8, u8),
    pub min_levels: usize,
}

impl Default for FuelGaugeConfig {
    fn default() -> Self {
        FuelGaugeConfig {
            cv_threshold: 0.12,
            soc_window: (10, 50),
            min_levels: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VariantConfig {
    pub low_window: (u8, u8),
    pub reference_window: (u8, u8),
    /// Levels strictly above `tail_start` form the tail window.
    pub tail_start: u8,
    pub cc_window: (u8, u8),
    pub cv_first_max_rate: f64,
    pub reference_min_rate: f64,
    pub tail_ratio: f64,
    pub fast_rate: f64,
    pub fast_share: f64,
}

impl Default for VariantConfig {
    fn default() -> Self {
        VariantConfig {
            low_window: (1, 10),
            reference_window: (20, 50),
            tail_start: 95,
            cc_window: (10, 50),
            cv_first_max_rate: 0.1,
            reference_min_rate: 0.3,
            tail_ratio: 0.7,
            fast_rate: 1.0,
            fast_share: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassificationConfig {
    pub bands: TechniqueBands,
    pub pulse: PulseConfig,
    pub fuel_gauge: FuelGaugeConfig,
    pub variants: VariantConfig,
    /// Events must reach this level to contribute a final voltage.
    pub min_final_soc: u8,
}

impl Default for ClassificationConfig {
    fn default() -> Self {
        ClassificationConfig {
            bands: TechniqueBands::default(),
            pulse: PulseConfig::default(),
            fuel_gauge: FuelGaugeConfig::default(),
            variants: VariantConfig::default(),
            min_final_soc: 95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PulseResult {
    pub detected: bool,
    pub reversals: u32,
    pub reason: Option<String>,
}

fn running_median(values: &[f64], width: usize) -> Vec<f64> {
    if width <= 1 || values.len() < width {
        return values.to_vec();
    }
    let half = width / 2;
    let mut buf = Vec::with_capacity(width);
    (0..values.len())
        .map(|i| {
            if i < half || i + half >= values.len() {
                return values[i];
            }
            buf.clear();
            buf.extend_from_slice(&values[i - half..=i + half]);
            median(&mut buf).unwrap_or(values[i])
        })
        .collect()
}

/// Counts sign changes between successive level differences of at least
/// `min_amplitude`.
pub fn count_reversals(values: &[f64], min_amplitude: f64) -> u32 {
    let mut last_sign = 0.0f64;
    let mut reversals = 0;
    for w in values.windows(2) {
        let d = w[1] - w[0];
        if d.abs() < min_amplitude || d == 0.0 {
            continue;
        }
        let sign = d.signum();
        if last_sign != 0.0 && sign != last_sign {
            reversals += 1;
        }
        last_sign = sign;
    }
    reversals
}

/// Looks for the alternating rise/fall that pulse charging leaves on the
/// voltage curve.
pub fn detect_pulse(curve: &SocCurve, cfg: &PulseConfig) -> PulseResult {
    let (lo, hi) = cfg.soc_window;
    let values = curve.values_in(lo, hi);
    if values.len() < cfg.min_levels {
        return PulseResult {
            detected: false,
            reversals: 0,
            reason: Some(format!(
                "only {} voltage levels in soc {lo}..={hi}, need {}",
                values.len(),
                cfg.min_levels
            )),
        };
    }
    let smoothed = running_median(&values, cfg.smoothing_window);
    let reversals = count_reversals(&smoothed, cfg.min_amplitude);
    PulseResult {
        detected: reversals >= cfg.min_reversals,
        reversals,
        reason: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TechniqueResult {
    pub technique: Technique,
    pub mean_final_voltage: Option<f64>,
    pub peak_voltage: Option<f64>,
    /// Voltage compared against the bands.
    pub ceiling_voltage: Option<f64>,
    pub pulse: PulseResult,
    pub reason: Option<String>,
}

/// Classifies the charging technique.
///
/// `final_voltages` are the top-of-charge voltages of events that reached
/// [`ClassificationConfig::min_final_soc`]. Pulse detection wins over the
/// Quick test, which wins over band membership. Bands are checked against
/// the larger of the mean final voltage and the curve peak, so a degraded
/// battery whose final voltage sagged still lands in its charger's band.
pub fn classify_technique(
    final_voltages: &[i32],
    voltage_curve: &SocCurve,
    cfg: &ClassificationConfig,
) -> TechniqueResult {
    let pulse = detect_pulse(voltage_curve, &cfg.pulse);
    let peak = voltage_curve.max_value();
    let mut result = TechniqueResult {
        technique: Technique::Unknown,
        mean_final_voltage: None,
        peak_voltage: peak,
        ceiling_voltage: None,
        pulse,
        reason: None,
    };
    if final_voltages.is_empty() {
        result.reason = Some(format!("no event reached soc {}", cfg.min_final_soc));
        return result;
    }
    let mean = final_voltages.iter().map(|&v| f64::from(v)).sum::<f64>() / final_voltages.len() as f64;
    result.mean_final_voltage = Some(mean);

    if result.pulse.detected {
        result.technique = Technique::FastPulse;
        return result;
    }
    if peak.is_some_and(|p| p > cfg.bands.quick_threshold) {
        result.technique = Technique::Quick;
        return result;
    }
    let ceiling = peak.map_or(mean, |p| p.max(mean));
    result.ceiling_voltage = Some(ceiling);
    match cfg.bands.band_of(ceiling) {
        Some(t) => result.technique = t,
        None => {
            result.reason = Some(format!("ceiling voltage {ceiling:.0} mV is outside both bands"))
        }
    }
    result
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct VariantReport {
    pub variants: BTreeSet<Variant>,
    /// Variants that could not be evaluated, with the reason.
    pub not_evaluable: BTreeMap<Variant, String>,
}

fn window_median(pool: &LevelPool, window: (u8, u8)) -> Option<f64> {
    median(&mut pool.values_in(window.0, window.1))
}

/// Step rates for variant detection. Events that start above the tail
/// window's lower edge are maintenance top-ups of a full battery, not part
/// of a charge cycle, and are left out.
pub fn variant_rate_pool<'a>(
    events: impl IntoIterator<Item = &'a ChargingEvent>,
    include_terminal: bool,
    cfg: &VariantConfig,
) -> LevelPool {
    let cycles = events
        .into_iter()
        .filter(|ev| ev.steps.first().is_some_and(|s| s.first.soc <= cfg.tail_start));
    LevelPool::step_rates(cycles, include_terminal)
}

/// Detects CV-first pre-charge, CC top-off tail and above-1C charging from
/// step rates keyed by destination level.
pub fn detect_variants<'a>(
    events: impl IntoIterator<Item = &'a ChargingEvent>,
    include_terminal: bool,
    cfg: &VariantConfig,
) -> VariantReport {
    detect_variants_from_rates(&variant_rate_pool(events, include_terminal, cfg), cfg)
}

pub fn detect_variants_from_rates(pool: &LevelPool, cfg: &VariantConfig) -> VariantReport {
    let mut report = VariantReport::default();
    let reference = window_median(pool, cfg.reference_window);
    let low = window_median(pool, cfg.low_window);
    let tail = window_median(pool, (cfg.tail_start.saturating_add(1), 100));

    match (low, reference) {
        (Some(low), Some(reference)) => {
            if low < cfg.cv_first_max_rate && reference >= cfg.reference_min_rate {
                report.variants.insert(Variant::CvFirst);
            }
        }
        _ => {
            report
                .not_evaluable
                .insert(Variant::CvFirst, "no rates in the low or reference window".into());
        }
    }

    match (tail, reference) {
        (Some(tail), Some(reference)) => {
            if tail >= cfg.tail_ratio * reference && tail >= cfg.reference_min_rate {
                report.variants.insert(Variant::CcTail);
            }
        }
        _ => {
            report
                .not_evaluable
                .insert(Variant::CcTail, "no rates in the tail or reference window".into());
        }
    }

    let cc = pool.values_in(cfg.cc_window.0, cfg.cc_window.1);
    if cc.is_empty() {
        report
            .not_evaluable
            .insert(Variant::FastRate, "no rates in the CC window".into());
    } else {
        let fast = cc.iter().filter(|&&r| r > cfg.fast_rate).count();
        if fast as f64 >= cfg.fast_share * cc.len() as f64 && fast > 0 {
            report.variants.insert(Variant::FastRate);
        }
    }
    report
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FuelGaugeResult {
    pub fuel_gauge: FuelGauge,
    pub dispersion: Option<f64>,
    pub reason: Option<String>,
}

/// IQR over median of per-percent charging times.
pub fn relative_dispersion(values: &[f64]) -> Option<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25)?;
    let q3 = quantile_sorted(&sorted, 0.75)?;
    let med = quantile_sorted(&sorted, 0.5)?;
    (med > 0.0).then(|| (q3 - q1) / med)
}

/// Infers the SOC estimator from how regular per-percent charging times are
/// during the CC phase.
pub fn infer_fuel_gauge(charge_time_curve: &SocCurve, cfg: &FuelGaugeConfig) -> FuelGaugeResult {
    let (lo, hi) = cfg.soc_window;
    let values = charge_time_curve.values_in(lo, hi);
    if values.len() < cfg.min_levels {
        return FuelGaugeResult {
            fuel_gauge: FuelGauge::Inconclusive,
            dispersion: None,
            reason: Some(format!(
                "only {} charge-time levels in soc {lo}..={hi}, need {}",
                values.len(),
                cfg.min_levels
            )),
        };
    }
    let Some(dispersion) = relative_dispersion(&values) else {
        return FuelGaugeResult {
            fuel_gauge: FuelGauge::Inconclusive,
            dispersion: None,
            reason: Some("median charge time is not positive".into()),
        };
    };
    let fuel_gauge = if dispersion <= cfg.cv_threshold {
        FuelGauge::CoulombCounter
    } else if dispersion > 2.0 * cfg.cv_threshold {
        FuelGauge::VoltageBased
    } else {
        FuelGauge::Inconclusive
    };
    FuelGaugeResult {
        fuel_gauge,
        dispersion: Some(dispersion),
        reason: None,
    }
}

/// Capacity loss in percent: every 10 mV the mean final voltage falls short
/// of nominal is one percent. Never negative.
pub fn capacity_loss(final_voltages: &[f64], nominal: f64) -> Result<f64> {
    if final_voltages.is_empty() {
        return Err(Error::Empty("no final voltages"));
    }
    let mean = final_voltages.iter().sum::<f64>() / final_voltages.len() as f64;
    Ok(((nominal - mean) / 10.0).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HealthRow {
    pub voltage_min: i32,
    pub voltage_max: i32,
    pub temp_min: f64,
    pub temp_max: f64,
    pub count: u64,
}

impl HealthRow {
    fn of(s: &BatterySample) -> Self {
        HealthRow {
            voltage_min: s.voltage_mv,
            voltage_max: s.voltage_mv,
            temp_min: s.temperature_c,
            temp_max: s.temperature_c,
            count: 1,
        }
    }

    pub fn merge(&mut self, other: &HealthRow) {
        self.voltage_min = self.voltage_min.min(other.voltage_min);
        self.voltage_max = self.voltage_max.max(other.voltage_max);
        self.temp_min = self.temp_min.min(other.temp_min);
        self.temp_max = self.temp_max.max(other.temp_max);
        self.count += other.count;
    }
}

pub type HealthSummary = BTreeMap<Health, HealthRow>;

/// Voltage and temperature ranges per reported health value.
pub fn health_summary<'a>(samples: impl IntoIterator<Item = &'a BatterySample>) -> HealthSummary {
    let mut out = HealthSummary::new();
    for s in samples {
        let row = HealthRow::of(s);
        out.entry(s.health)
            .and_modify(|r| r.merge(&row))
            .or_insert(row);
    }
    out
}

pub fn merge_health(into: &mut HealthSummary, other: &HealthSummary) {
    for (h, row) in other {
        into.entry(*h).and_modify(|r| r.merge(row)).or_insert(*row);
    }
}
