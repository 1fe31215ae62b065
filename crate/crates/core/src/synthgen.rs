//! Synthetic battery traces with known ground truth.
//!
//! Each trace is a phenomenological template of a charging curve: a linear
//! CC-phase voltage ramp, a CV phase whose per-percent time grows
//! geometrically, and the technique-specific features (higher Quick peak,
//! square-wave pulse ripple, CV pre-charge, CC top-off). Traces are fully
//! determined by their [`TraceSpec`], seed included.

use std::collections::BTreeSet;
use std::io::Write;
use std::sync::Arc;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{
    BatterySample, Charger, FuelGauge, Health, Screen, Technique, Variant, MAX_VOLTAGE_MV,
    MIN_VOLTAGE_MV, SECONDS_PER_PERCENT_AT_1C,
};
use crate::error::{Error, Result};

const BASE_VOLTAGE_MV: f64 = 3600.0;
const QUICK_PEAK_MV: f64 = 4480.0;
const PULSE_KNEE_MV: f64 = 4150.0;
const PULSE_AMPLITUDE_MV: f64 = 40.0;
const PULSE_HALF_PERIOD: u8 = 5;
const PULSE_WINDOW: (u8, u8) = (30, 95);
const CV_FIRST_RATE: f64 = 0.05;
const CV_FIRST_END: u8 = 10;
const CC_TAIL_START: u8 = 95;
/// Rate reached at the end of the CV taper; above both termination rates.
const CV_FINAL_RATE: f64 = 0.08;
const FAST_TEMPERATURE_OFFSET: f64 = 9.0;
const CCCV_TEMPERATURE_OFFSET: f64 = 1.0;
const DEFAULT_START_TIME: f64 = 1_450_000_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluctuationSpec {
    /// Lower of the two levels.
    pub level: u8,
    /// Direction reversals; must be even so the trace resumes upward.
    pub reversals: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FullPluggedSpec {
    pub hours: f64,
    /// Seconds per maintenance cycle.
    pub cycle_s: f64,
    /// Percent discharged before each recharge (1 or 2).
    pub dip_pct: u8,
}

impl Default for FullPluggedSpec {
    fn default() -> Self {
        FullPluggedSpec {
            hours: 10.0,
            cycle_s: 360.0,
            dip_pct: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct BehaviorSpec {
    pub fluctuation: Option<FluctuationSpec>,
    pub full_plugged: Option<FullPluggedSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TraceSpec {
    pub technique: Technique,
    pub variants: BTreeSet<Variant>,
    pub fuel_gauge: FuelGauge,
    pub cc_rate: f64,
    /// CC rate for Quick and FastPulse.
    pub fast_rate: f64,
    pub capacity_loss_pct: f64,
    pub voltage_noise_mv: f64,
    /// Relative jitter on CC per-percent times for voltage-based gauges.
    pub time_jitter_rel: f64,
    /// Level at which the CV phase starts (CC-CV, DLC, FastPulse).
    pub cv_onset: u8,
    /// Level at which Quick charging peaks and switches to CV.
    pub quick_cv_onset: u8,
    /// Charging sessions in the trace; more than one produces slow or
    /// discharging gaps between them.
    pub sessions: u32,
    pub behavior: BehaviorSpec,
    pub seed: u64,
    pub user_id: String,
    pub model: String,
    pub start_time: f64,
}

impl Default for TraceSpec {
    fn default() -> Self {
        TraceSpec {
            technique: Technique::CcCv,
            variants: BTreeSet::new(),
            fuel_gauge: FuelGauge::CoulombCounter,
            cc_rate: 0.5,
            fast_rate: 1.1,
            capacity_loss_pct: 0.0,
            voltage_noise_mv: 0.0,
            time_jitter_rel: 0.4,
            cv_onset: 80,
            quick_cv_onset: 60,
            sessions: 1,
            behavior: BehaviorSpec::default(),
            seed: 0,
            user_id: "synthetic".into(),
            model: String::new(),
            start_time: DEFAULT_START_TIME,
        }
    }
}

impl TraceSpec {
    pub fn new(technique: Technique, fuel_gauge: FuelGauge) -> Self {
        TraceSpec {
            technique,
            fuel_gauge,
            ..Default::default()
        }
    }

    pub fn with_variant(mut self, v: Variant) -> Self {
        self.variants.insert(v);
        self
    }

    pub fn model_name(&self) -> String {
        if self.model.is_empty() {
            format!("synth-{}", self.technique)
        } else {
            self.model.clone()
        }
    }

    fn cc_rate_for_technique(&self) -> f64 {
        match self.technique {
            Technique::Quick | Technique::FastPulse => self.fast_rate,
            _ => self.cc_rate,
        }
    }

    fn onset(&self) -> u8 {
        match self.technique {
            Technique::Quick => self.quick_cv_onset,
            _ => self.cv_onset,
        }
    }

    fn plateau(&self) -> f64 {
        match self.technique {
            Technique::CcCv => 4200.0,
            _ => 4350.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.to_string()));
        if self.technique == Technique::Unknown {
            return bad("technique must be cc_cv, dlc, quick or fast_pulse");
        }
        if self.fuel_gauge == FuelGauge::Inconclusive {
            return bad("fuel gauge must be coulomb_counter or voltage_based");
        }
        if !(self.cc_rate > 0.0 && self.fast_rate > 0.0) {
            return bad("rates must be positive");
        }
        if self.voltage_noise_mv < 0.0 || !self.voltage_noise_mv.is_finite() {
            return bad("voltage noise must be non-negative");
        }
        if !(0.0..1.0).contains(&self.time_jitter_rel) {
            return bad("time jitter must be in [0, 1)");
        }
        if !(0.0..=100.0).contains(&self.capacity_loss_pct) {
            return bad("capacity loss must be in [0, 100]");
        }
        if !(50..=90).contains(&self.cv_onset) {
            return bad("cv_onset must be in [50, 90]");
        }
        if !(2..=99).contains(&self.quick_cv_onset) {
            return bad("quick_cv_onset must be in [2, 99]");
        }
        if self.variants.contains(&Variant::FastRate) {
            return bad("fast_rate is derived from the CC rate, not set as a variant");
        }
        if self.variants.contains(&Variant::CvFirst) && self.onset() <= CV_FIRST_END {
            return bad("CV-first pre-charge overlaps a CV phase starting at or below soc 10");
        }
        if self.variants.contains(&Variant::CcTail) && self.onset() >= CC_TAIL_START {
            return bad("CC tail needs the CV phase to start below soc 95");
        }
        if self.sessions == 0 {
            return bad("sessions must be at least 1");
        }
        if let Some(f) = self.behavior.fluctuation {
            if f.reversals < 2 || f.reversals % 2 != 0 {
                return bad("fluctuation reversals must be even and at least 2");
            }
            if !(1..=98).contains(&f.level) {
                return bad("fluctuation level must be in [1, 98]");
            }
        }
        if let Some(p) = self.behavior.full_plugged {
            if !(p.hours > 0.0 && p.cycle_s > 0.0) || !(1..=2).contains(&p.dip_pct) {
                return bad("full-plugged needs positive hours and cycle, dip of 1 or 2");
            }
        }
        Ok(())
    }

    /// Charging rate used to reach `soc` from `soc - 1`, before jitter.
    pub fn rate_at(&self, soc: u8) -> f64 {
        let cc = self.cc_rate_for_technique();
        let onset = self.onset();
        if self.variants.contains(&Variant::CvFirst) && soc <= CV_FIRST_END {
            return CV_FIRST_RATE;
        }
        if soc <= onset {
            return cc;
        }
        let tail = self.variants.contains(&Variant::CcTail);
        if tail && soc > CC_TAIL_START {
            return cc;
        }
        let cv_end = if tail { CC_TAIL_START } else { 100 };
        let final_rate = cc.min(CV_FINAL_RATE);
        let span = f64::from(cv_end - onset);
        let k = f64::from(soc - onset);
        cc * (final_rate / cc).powf(k / span)
    }

    fn in_cc_phase(&self, soc: u8) -> bool {
        let cv_first = self.variants.contains(&Variant::CvFirst) && soc <= CV_FIRST_END;
        !cv_first && soc <= self.onset()
    }

    /// Noise-free battery voltage at `soc`, millivolts.
    pub fn voltage_at(&self, soc: u8) -> f64 {
        let s = f64::from(soc);
        let sag = 10.0 * self.capacity_loss_pct;
        let ramp = |from_soc: f64, from_v: f64, to_soc: f64, to_v: f64| {
            from_v + (to_v - from_v) * (s - from_soc) / (to_soc - from_soc)
        };
        match self.technique {
            Technique::CcCv | Technique::Dlc => {
                let onset = f64::from(self.cv_onset);
                let plateau = self.plateau();
                if s <= onset {
                    ramp(1.0, BASE_VOLTAGE_MV, onset, plateau)
                } else {
                    ramp(onset, plateau, 100.0, plateau - sag)
                }
            }
            Technique::Quick => {
                let onset = f64::from(self.quick_cv_onset);
                if s <= onset {
                    ramp(1.0, BASE_VOLTAGE_MV, onset, QUICK_PEAK_MV)
                } else {
                    ramp(onset, QUICK_PEAK_MV, 100.0, 4350.0 - sag)
                }
            }
            Technique::FastPulse => {
                let onset = f64::from(self.cv_onset);
                let knee = f64::from(PULSE_WINDOW.0);
                let base = if s <= knee {
                    ramp(1.0, BASE_VOLTAGE_MV, knee, PULSE_KNEE_MV)
                } else if s <= onset {
                    ramp(knee, PULSE_KNEE_MV, onset, 4350.0)
                } else {
                    ramp(onset, 4350.0, 100.0, 4350.0 - sag)
                };
                base + pulse_offset(soc)
            }
            Technique::Unknown => BASE_VOLTAGE_MV,
        }
    }

    /// Battery temperature template at `soc`, Celsius.
    pub fn temperature_at(&self, soc: u8) -> f64 {
        let s = f64::from(soc);
        let base = if s <= 20.0 {
            33.0 - 4.0 * (s - 1.0) / 19.0
        } else if s <= 80.0 {
            29.0
        } else {
            29.0 - 3.0 * (s - 80.0) / 20.0
        };
        let offset = match self.technique {
            Technique::Quick | Technique::FastPulse => FAST_TEMPERATURE_OFFSET,
            Technique::CcCv => CCCV_TEMPERATURE_OFFSET,
            _ => 0.0,
        };
        ((base + offset) * 10.0).round() / 10.0
    }

    /// Variants a correct detector should report for this spec.
    pub fn expected_variants(&self) -> BTreeSet<Variant> {
        let mut v = self.variants.clone();
        if self.cc_rate_for_technique() > 1.0 {
            v.insert(Variant::FastRate);
        }
        v
    }
}

fn pulse_offset(soc: u8) -> f64 {
    if !(PULSE_WINDOW.0..=PULSE_WINDOW.1).contains(&soc) {
        return 0.0;
    }
    if ((soc - PULSE_WINDOW.0) / PULSE_HALF_PERIOD).is_multiple_of(2) {
        PULSE_AMPLITUDE_MV
    } else {
        -PULSE_AMPLITUDE_MV
    }
}

/// Step indices (into the paired step sequence) of one charging session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionTruth {
    pub first_step: usize,
    /// Inclusive; for all but the last session this is the gap step.
    pub last_step: usize,
    pub soc_range: (u8, u8),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullPluggedTruth {
    pub cycles: u32,
    pub duration_s: f64,
    pub dip_pct: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub user_id: String,
    pub model: String,
    pub technique: Technique,
    pub variants: BTreeSet<Variant>,
    pub fuel_gauge: FuelGauge,
    pub capacity_loss_pct: f64,
    pub voltage_noise_mv: f64,
    pub sessions: Vec<SessionTruth>,
    pub fluctuation: Option<FluctuationSpec>,
    pub full_plugged: Option<FullPluggedTruth>,
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub samples: Vec<BatterySample>,
    pub truth: GroundTruth,
}

struct Builder<'a> {
    spec: &'a TraceSpec,
    rng: ChaCha8Rng,
    noise: Option<Normal<f64>>,
    user: Arc<str>,
    model: Arc<str>,
    t: f64,
    samples: Vec<BatterySample>,
}

impl Builder<'_> {
    fn voltage(&mut self, soc: u8, offset: f64) -> i32 {
        let mut v = self.spec.voltage_at(soc) + offset;
        if let Some(n) = &self.noise {
            v += n.sample(&mut self.rng);
        }
        (v.round() as i32).clamp(MIN_VOLTAGE_MV, MAX_VOLTAGE_MV)
    }

    fn push(&mut self, soc: u8, screen: Screen, charger: Charger, voltage_offset: f64) {
        let voltage_mv = self.voltage(soc, voltage_offset);
        self.samples.push(BatterySample {
            timestamp: self.t,
            user_id: self.user.clone(),
            model: self.model.clone(),
            soc,
            voltage_mv,
            temperature_c: self.spec.temperature_at(soc),
            health: Health::Good,
            charger,
            charging: charger != Charger::Unplugged,
            screen,
        });
    }

    fn per_percent_time(&mut self, soc: u8) -> f64 {
        let mut dt = SECONDS_PER_PERCENT_AT_1C / self.spec.rate_at(soc);
        if self.spec.fuel_gauge == FuelGauge::VoltageBased && self.spec.in_cc_phase(soc) {
            let j = self.spec.time_jitter_rel;
            if j > 0.0 {
                dt *= 1.0 + self.rng.random_range(-j..=j);
            }
        }
        dt
    }

    /// Charges from the current level (already sampled) up to `hi`.
    fn charge(&mut self, from: u8, hi: u8, fluctuation: &mut Option<FluctuationSpec>) {
        for soc in from + 1..=hi {
            self.t += self.per_percent_time(soc);
            self.push(soc, Screen::Off, Charger::Ac, 0.0);
            if let Some(f) = fluctuation.filter(|f| f.level + 1 == soc) {
                for k in 0..f.reversals {
                    self.t += 60.0;
                    let level = if k % 2 == 0 { f.level } else { f.level + 1 };
                    self.push(level, Screen::On, Charger::Ac, 0.0);
                }
                *fluctuation = None;
            }
        }
    }
}

fn session_ranges(spec: &TraceSpec, rng: &mut ChaCha8Rng) -> Vec<(u8, u8)> {
    if spec.sessions == 1 {
        return vec![(1, 100)];
    }
    let mut out = Vec::with_capacity(spec.sessions as usize);
    let mut prev_hi: Option<u8> = None;
    for _ in 0..spec.sessions {
        // A creep gap continues from the previous top level; otherwise the
        // battery has drained in between.
        let creep = prev_hi.is_some_and(|h| h <= 85) && rng.random_bool(0.5);
        let lo = match prev_hi {
            Some(h) if creep => h + 1,
            _ => rng.random_range(1..=40),
        };
        let hi = rng.random_range((lo + 10).clamp(60, 100)..=100);
        out.push((lo, hi));
        prev_hi = Some(hi);
    }
    out
}

/// Builds one trace and its ground truth.
pub fn generate_trace(spec: &TraceSpec) -> Result<Trace> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let ranges = session_ranges(spec, &mut rng);
    let noise = (spec.voltage_noise_mv > 0.0)
        .then(|| Normal::new(0.0, spec.voltage_noise_mv))
        .transpose()
        .map_err(|e| Error::InvalidSpec(e.to_string()))?;
    let mut b = Builder {
        spec,
        rng,
        noise,
        user: Arc::from(spec.user_id.as_str()),
        model: Arc::from(spec.model_name().as_str()),
        t: spec.start_time,
        samples: Vec::new(),
    };

    let mut fluctuation = spec.behavior.fluctuation;
    let mut sessions = Vec::with_capacity(ranges.len());
    let mut prev_hi: Option<u8> = None;
    for &(lo, hi) in &ranges {
        match prev_hi {
            Some(h) if lo == h + 1 => {
                // creep gap: one percent at well under 0.03C
                let rate = b.rng.random_range(0.005..0.025);
                b.t += SECONDS_PER_PERCENT_AT_1C / rate;
                b.push(lo, Screen::Off, Charger::Ac, 0.0);
            }
            Some(_) => {
                b.t += b.rng.random_range(3600.0..8.0 * 3600.0);
                b.push(lo, Screen::Off, Charger::Ac, 0.0);
            }
            None => b.push(lo, Screen::Off, Charger::Ac, 0.0),
        }
        let first_sample = b.samples.len() - 1;
        b.charge(lo, hi, &mut fluctuation);
        sessions.push((first_sample, b.samples.len() - 1, lo, hi));
        prev_hi = Some(hi);
    }
    // Steps are indexed by their first sample; the gap step into session k+1
    // starts at the last sample of session k.
    let n_sessions = sessions.len();
    let session_truth: Vec<SessionTruth> = sessions
        .iter()
        .enumerate()
        .map(|(k, &(first, last, lo, hi))| SessionTruth {
            first_step: first,
            last_step: if k + 1 < n_sessions { last } else { last - 1 },
            soc_range: (lo, hi),
        })
        .collect();

    let mut full_truth = None;
    if let Some(p) = spec.behavior.full_plugged {
        if prev_hi == Some(100) {
            let cycles = (p.hours * 3600.0 / p.cycle_s).floor() as u32;
            let start = b.t;
            for _ in 0..cycles {
                b.t += p.cycle_s * 0.8;
                b.push(100 - p.dip_pct, Screen::Off, Charger::Ac, -10.0);
                b.t += p.cycle_s * 0.2;
                b.push(100, Screen::Off, Charger::Ac, 0.0);
            }
            let duration = b.t - start;
            b.t += 1.0;
            b.push(100, Screen::Off, Charger::Unplugged, 0.0);
            full_truth = Some(FullPluggedTruth {
                cycles,
                duration_s: duration,
                dip_pct: p.dip_pct,
            });
        }
    }

    let truth = GroundTruth {
        user_id: spec.user_id.clone(),
        model: spec.model_name(),
        technique: spec.technique,
        variants: spec.expected_variants(),
        fuel_gauge: spec.fuel_gauge,
        capacity_loss_pct: spec.capacity_loss_pct,
        voltage_noise_mv: spec.voltage_noise_mv,
        sessions: session_truth,
        fluctuation: spec.behavior.fluctuation,
        full_plugged: full_truth,
    };
    Ok(Trace {
        samples: b.samples,
        truth,
    })
}

/// One stratum of a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub count: usize,
    #[serde(flatten)]
    pub spec: TraceSpec,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default)]
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn total(&self) -> usize {
        self.entries.iter().map(|e| e.count).sum()
    }
}

fn mix_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The concrete per-user specs of a corpus, in output order.
pub fn corpus_specs(manifest: &Manifest) -> Vec<TraceSpec> {
    let mut out = Vec::with_capacity(manifest.total());
    for entry in &manifest.entries {
        for _ in 0..entry.count {
            let index = out.len() as u64;
            let mut spec = entry.spec.clone();
            spec.seed = mix_seed(manifest.seed, index);
            spec.user_id = format!("u{index:06}");
            spec.model = entry.spec.model_name();
            spec.start_time = DEFAULT_START_TIME + index as f64 * 86_400.0;
            out.push(spec);
        }
    }
    out
}

/// Generates every trace of a corpus in parallel; output order follows the
/// manifest.
pub fn generate_corpus(manifest: &Manifest) -> Result<Vec<Trace>> {
    for e in &manifest.entries {
        e.spec.validate()?;
    }
    corpus_specs(manifest).par_iter().map(generate_trace).collect()
}

/// Writes the samples as JSONL and returns the ground truth keyed by user.
pub fn write_corpus<W: Write>(
    writer: W,
    traces: &[Trace],
) -> Result<IndexMap<String, GroundTruth>> {
    let mut w = std::io::BufWriter::new(writer);
    let mut truth = IndexMap::with_capacity(traces.len());
    for trace in traces {
        for s in &trace.samples {
            serde_json::to_writer(&mut w, s)?;
            w.write_all(b"\n")?;
        }
        truth.insert(trace.truth.user_id.clone(), trace.truth.clone());
    }
    w.flush()?;
    Ok(truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmentation::pair_consecutive;

    #[test]
    fn plain_cccv_trace() {
        let trace = generate_trace(&TraceSpec::new(Technique::CcCv, FuelGauge::CoulombCounter)).unwrap();
        let s = &trace.samples;
        assert_eq!(s.len(), 100);
        assert_eq!(s[1].timestamp - s[0].timestamp, 72.0);
        assert_eq!(s[99].voltage_mv, 4200);
        assert_eq!(s[0].voltage_mv, 3600);
        for x in s {
            x.validate().unwrap();
        }
    }

    #[test]
    fn cv_taper_ends_between_termination_and_trickle() {
        let spec = TraceSpec::new(Technique::Dlc, FuelGauge::CoulombCounter);
        let last = spec.rate_at(100);
        assert!((last - CV_FINAL_RATE).abs() < 1e-12);
        assert!(last <= 0.1 && last > 0.07);
        for soc in 2..=100 {
            assert!(spec.rate_at(soc) > 0.07);
        }
    }

    #[test]
    fn capacity_loss_shifts_final_voltage() {
        let mut spec = TraceSpec::new(Technique::Dlc, FuelGauge::CoulombCounter);
        spec.capacity_loss_pct = 10.0;
        let trace = generate_trace(&spec).unwrap();
        assert_eq!(trace.samples.last().unwrap().voltage_mv, 4250);
    }

    #[test]
    fn same_seed_same_trace() {
        let mut spec = TraceSpec::new(Technique::CcCv, FuelGauge::VoltageBased);
        spec.voltage_noise_mv = 10.0;
        spec.sessions = 3;
        spec.seed = 42;
        let a = generate_trace(&spec).unwrap();
        let b = generate_trace(&spec).unwrap();
        assert_eq!(a.samples, b.samples);
        spec.seed = 43;
        let c = generate_trace(&spec).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn contradictory_specs_are_rejected() {
        let mut spec = TraceSpec::new(Technique::Quick, FuelGauge::CoulombCounter).with_variant(Variant::CvFirst);
        spec.quick_cv_onset = 8;
        assert!(matches!(generate_trace(&spec), Err(Error::InvalidSpec(_))));
        assert!(generate_trace(&TraceSpec::new(Technique::Unknown, FuelGauge::CoulombCounter)).is_err());
        let mut spec = TraceSpec::default();
        spec.behavior.fluctuation = Some(FluctuationSpec { level: 5, reversals: 3 });
        assert!(generate_trace(&spec).is_err());
    }

    #[test]
    fn session_truth_matches_gap_steps() {
        let spec = TraceSpec {
            sessions: 4,
            seed: 7,
            ..TraceSpec::default()
        };
        let trace = generate_trace(&spec).unwrap();
        let steps = pair_consecutive(&trace.samples);
        let sessions = &trace.truth.sessions;
        assert_eq!(sessions.len(), 4);
        assert_eq!(sessions[0].first_step, 0);
        assert_eq!(sessions.last().unwrap().last_step, steps.len() - 1);
        for w in sessions.windows(2) {
            assert_eq!(w[0].last_step + 1, w[1].first_step);
            let gap = &steps[w[0].last_step];
            assert!(gap.c_rate <= 0.03, "gap rate {}", gap.c_rate);
        }
    }

    #[test]
    fn full_plugged_tail() {
        let mut spec = TraceSpec::default();
        spec.behavior.full_plugged = Some(FullPluggedSpec::default());
        let trace = generate_trace(&spec).unwrap();
        let truth = trace.truth.full_plugged.unwrap();
        assert_eq!(truth.cycles, 100);
        assert!((truth.duration_s - 36_000.0).abs() < 1e-6);
        assert!(!trace.samples.last().unwrap().charging);
    }

    #[test]
    fn corpus_follows_manifest() {
        let manifest = Manifest {
            seed: 1,
            entries: vec![
                ManifestEntry {
                    count: 3,
                    spec: TraceSpec::new(Technique::Dlc, FuelGauge::CoulombCounter),
                },
                ManifestEntry {
                    count: 2,
                    spec: TraceSpec::new(Technique::CcCv, FuelGauge::VoltageBased),
                },
            ],
        };
        let traces = generate_corpus(&manifest).unwrap();
        let techniques: Vec<Technique> = traces.iter().map(|t| t.truth.technique).collect();
        assert_eq!(
            techniques,
            vec![Technique::Dlc, Technique::Dlc, Technique::Dlc, Technique::CcCv, Technique::CcCv]
        );
        assert_eq!(traces[4].truth.user_id, "u000004");
    }
}
