//! Core record types shared by every analysis stage.
//!
//! A [`BatterySample`] is one SOC-update broadcast from the device's battery
//! manager. Pairs of consecutive samples form [`ChargeStep`]s, runs of steps
//! form [`ChargingEvent`]s, and the per-device results end up in a
//! [`DeviceProfile`] and a [`BehaviorReport`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Lowest plausible battery voltage, millivolts.
pub const MIN_VOLTAGE_MV: i32 = 2000;
/// Highest plausible battery voltage, millivolts.
pub const MAX_VOLTAGE_MV: i32 = 5000;
/// Lowest plausible battery temperature, degrees Celsius.
pub const MIN_TEMPERATURE_C: f64 = -30.0;
/// Highest plausible battery temperature, degrees Celsius.
pub const MAX_TEMPERATURE_C: f64 = 100.0;

/// Seconds needed to gain one percent at 1C.
pub const SECONDS_PER_PERCENT_AT_1C: f64 = 36.0;

macro_rules! string_enum {
    ($name:ident { $($variant:ident => $wire:literal),+ $(,)? }) => {
        impl $name {
            pub fn as_str(&self) -> &'static str {
                match self {
                    $($name::$variant => $wire,)+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                serializer.serialize_str(self.as_str())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                let raw = std::borrow::Cow::<'de, str>::deserialize(deserializer)?;
                raw.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

/// Battery health as reported by the platform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Health {
    Good,
    Overheat,
    OverVoltage,
    Other,
}

string_enum!(Health {
    Good => "good",
    Overheat => "overheat",
    OverVoltage => "over_voltage",
    Other => "other",
});

impl FromStr for Health {
    type Err = std::convert::Infallible;

    /// Never fails: unrecognised strings become [`Health::Other`].
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace([' ', '-'], "_");
        Ok(match norm.as_str() {
            "good" => Health::Good,
            "overheat" | "over_heat" => Health::Overheat,
            "over_voltage" | "overvoltage" => Health::OverVoltage,
            _ => Health::Other,
        })
    }
}

/// Power source the device is attached to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Charger {
    Ac,
    Usb,
    Unplugged,
}

string_enum!(Charger {
    Ac => "ac",
    Usb => "usb",
    Unplugged => "unplugged",
});

impl FromStr for Charger {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ac" | "ac main" | "ac_main" => Ok(Charger::Ac),
            "usb" => Ok(Charger::Usb),
            "unplugged" | "none" => Ok(Charger::Unplugged),
            other => Err(format!("unknown charger {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Screen {
    On,
    Off,
}

string_enum!(Screen {
    On => "on",
    Off => "off",
});

impl FromStr for Screen {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "on" => Ok(Screen::On),
            "off" => Ok(Screen::Off),
            other => Err(format!("unknown screen state {other:?}")),
        }
    }
}

/// One timestamped SOC update with its battery attributes.
///
/// Field names on the wire follow the JSONL schema (`time`, `user`, ...).
/// Identifiers are reference counted so that steps and events can carry
/// copies of samples cheaply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatterySample {
    /// Epoch seconds.
    #[serde(rename = "time")]
    pub timestamp: f64,
    #[serde(rename = "user")]
    pub user_id: Arc<str>,
    pub model: Arc<str>,
    /// Battery level, percent.
    pub soc: u8,
    pub voltage_mv: i32,
    #[serde(rename = "temp_c")]
    pub temperature_c: f64,
    pub health: Health,
    pub charger: Charger,
    pub charging: bool,
    pub screen: Screen,
}

impl BatterySample {
    /// Checks the plausibility bounds every ingested sample must satisfy.
    pub fn validate(&self) -> Result<(), String> {
        if self.soc > 100 {
            return Err("soc out of range".into());
        }
        if !(MIN_VOLTAGE_MV..=MAX_VOLTAGE_MV).contains(&self.voltage_mv) {
            return Err("voltage out of range".into());
        }
        if !self.temperature_c.is_finite()
            || !(MIN_TEMPERATURE_C..=MAX_TEMPERATURE_C).contains(&self.temperature_c)
        {
            return Err("temperature out of range".into());
        }
        if !self.timestamp.is_finite() {
            return Err("timestamp is not finite".into());
        }
        Ok(())
    }
}

/// A pair of consecutive samples and the charging rate between them.
#[derive(Debug, Clone, PartialEq)]
pub struct ChargeStep {
    pub first: BatterySample,
    pub second: BatterySample,
    /// Percent gained, `second.soc - first.soc`.
    pub delta_soc: i32,
    /// Seconds elapsed, `second.timestamp - first.timestamp`.
    pub delta_t: f64,
    /// Rate in C units; zero for non-charging steps.
    pub c_rate: f64,
}

impl ChargeStep {
    /// True when the step gained charge.
    pub fn is_charging(&self) -> bool {
        self.delta_soc > 0
    }

    /// Seconds per percent, for charging steps only.
    pub fn seconds_per_percent(&self) -> Option<f64> {
        self.is_charging()
            .then(|| self.delta_t / f64::from(self.delta_soc))
    }
}

/// One charging session: an ordered run of steps sharing an event id.
#[derive(Debug, Clone, PartialEq)]
pub struct ChargingEvent {
    pub event_id: u32,
    pub user_id: Arc<str>,
    pub model: Arc<str>,
    pub steps: Vec<ChargeStep>,
    pub start_time: f64,
    pub end_time: f64,
    /// Whether the last step is a terminating (slow or non-charging) step.
    /// An event that runs to the end of the trace is left open.
    pub closed: bool,
}

impl ChargingEvent {
    /// Samples that belong to this event.
    ///
    /// A closing step's later sample opens the next event, so it is not
    /// part of this one.
    pub fn samples(&self) -> impl Iterator<Item = &BatterySample> + '_ {
        let tail = if self.closed {
            None
        } else {
            self.steps.last().map(|s| &s.second)
        };
        self.steps.iter().map(|s| &s.first).chain(tail)
    }

    /// Steps that count toward rate statistics.
    ///
    /// The closing step is excluded unless `include_terminal` is set; only
    /// steps that gained charge are returned in either case.
    pub fn rate_steps(&self, include_terminal: bool) -> impl Iterator<Item = &ChargeStep> + '_ {
        let interior = if self.closed && !include_terminal {
            self.steps.len().saturating_sub(1)
        } else {
            self.steps.len()
        };
        self.steps[..interior].iter().filter(|s| s.is_charging())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    Voltage,
    ChargeTime,
    Temperature,
}

impl fmt::Display for CurveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CurveKind::Voltage => "voltage",
            CurveKind::ChargeTime => "charge_time",
            CurveKind::Temperature => "temperature",
        })
    }
}

/// Aggregate value at one SOC level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub value: f64,
    pub count: usize,
}

/// Per-SOC-level median curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocCurve {
    pub kind: CurveKind,
    pub points: BTreeMap<u8, CurvePoint>,
}

impl SocCurve {
    pub fn new(kind: CurveKind) -> Self {
        SocCurve {
            kind,
            points: BTreeMap::new(),
        }
    }

    pub fn get(&self, soc: u8) -> Option<f64> {
        self.points.get(&soc).map(|p| p.value)
    }

    /// Values for levels in `lo..=hi`, in ascending level order.
    pub fn values_in(&self, lo: u8, hi: u8) -> Vec<f64> {
        self.points.range(lo..=hi).map(|(_, p)| p.value).collect()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn max_value(&self) -> Option<f64> {
        self.points.values().map(|p| p.value).reduce(f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Technique {
    CcCv,
    Dlc,
    Quick,
    FastPulse,
    Unknown,
}

impl Technique {
    pub const ALL: [Technique; 5] = [
        Technique::CcCv,
        Technique::Dlc,
        Technique::Quick,
        Technique::FastPulse,
        Technique::Unknown,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Technique::CcCv => "cc_cv",
            Technique::Dlc => "dlc",
            Technique::Quick => "quick",
            Technique::FastPulse => "fast_pulse",
            Technique::Unknown => "unknown",
        }
    }

    /// Nominal full-charge voltage for the two standard techniques.
    pub fn nominal_final_voltage(&self) -> Option<i32> {
        match self {
            Technique::CcCv => Some(4200),
            Technique::Dlc => Some(4350),
            _ => None,
        }
    }
}

impl fmt::Display for Technique {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Technique {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "cc_cv" | "cccv" => Ok(Technique::CcCv),
            "dlc" => Ok(Technique::Dlc),
            "quick" => Ok(Technique::Quick),
            "fast_pulse" | "fastpulse" | "pulse" => Ok(Technique::FastPulse),
            "unknown" => Ok(Technique::Unknown),
            other => Err(format!("unknown technique {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Constant-voltage pre-charge over the first 10%.
    CvFirst,
    /// Constant-current top-off above 95%.
    CcTail,
    /// Sustained rates above 1C during the CC phase.
    FastRate,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::CvFirst => "cv_first",
            Variant::CcTail => "cc_tail",
            Variant::FastRate => "fast_rate",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "cv_first" | "cvfirst" => Ok(Variant::CvFirst),
            "cc_tail" | "cctail" => Ok(Variant::CcTail),
            "fast_rate" | "fastrate" => Ok(Variant::FastRate),
            other => Err(format!("unknown variant {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FuelGauge {
    CoulombCounter,
    VoltageBased,
    Inconclusive,
}

impl FuelGauge {
    pub fn as_str(&self) -> &'static str {
        match self {
            FuelGauge::CoulombCounter => "coulomb_counter",
            FuelGauge::VoltageBased => "voltage_based",
            FuelGauge::Inconclusive => "inconclusive",
        }
    }
}

impl fmt::Display for FuelGauge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FuelGauge {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "coulomb_counter" | "coulomb" => Ok(FuelGauge::CoulombCounter),
            "voltage_based" | "voltage" => Ok(FuelGauge::VoltageBased),
            "inconclusive" => Ok(FuelGauge::Inconclusive),
            other => Err(format!("unknown fuel gauge {other:?}")),
        }
    }
}

/// Classification results for one device, or for one model when events are
/// pooled per model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    /// Grouping key: the user id, or the model name for pooled profiles.
    pub group: String,
    pub user_id: Option<Arc<str>>,
    pub model: Arc<str>,
    pub technique: Technique,
    pub variants: BTreeSet<Variant>,
    pub fuel_gauge: FuelGauge,
    /// Median voltage at soc 1, if observed.
    pub initial_voltage: Option<f64>,
    /// Mean of per-event final voltages at soc 100 (V_rf).
    pub final_voltage_mean: Option<f64>,
    /// Nominal full-charge voltage (V_f) implied by the technique.
    pub nominal_final_voltage: Option<i32>,
    pub capacity_loss_pct: Option<f64>,
    pub event_count: usize,
    pub device_count: usize,
    /// Why any of the optional fields above could not be computed.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reasons: Vec<String>,
}

/// A run where the battery level bounced between two adjacent levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluctuationEpisode {
    pub event_id: Option<u32>,
    pub soc_low: u8,
    pub soc_high: u8,
    /// Direction reversals inside the run (5↑6↓5↑6 has two).
    pub repetitions: u32,
    pub start_time: f64,
    pub end_time: f64,
    pub total_duration_s: f64,
    /// Any sample in the run had the screen on.
    pub active_use: bool,
}

/// A period during which the device stayed plugged in after reaching 100%.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullPluggedEpisode {
    pub start_time: f64,
    pub end_time: f64,
    pub duration_s: f64,
    pub maintenance_cycles: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorReport {
    pub user_id: Arc<str>,
    pub model: Arc<str>,
    pub fluctuation_episodes: Vec<FluctuationEpisode>,
    pub full_plugged_episodes: Vec<FullPluggedEpisode>,
    /// Total over all full-plugged episodes; absent without a configured
    /// nominal capacity.
    pub wasted_energy_estimate: Option<f64>,
}

impl BehaviorReport {
    pub fn is_empty(&self) -> bool {
        self.fluctuation_episodes.is_empty() && self.full_plugged_episodes.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(soc: u8, t: f64) -> BatterySample {
        BatterySample {
            timestamp: t,
            user_id: "u".into(),
            model: "m".into(),
            soc,
            voltage_mv: 4000,
            temperature_c: 29.0,
            health: Health::Good,
            charger: Charger::Ac,
            charging: true,
            screen: Screen::Off,
        }
    }

    #[test]
    fn health_parsing_is_lenient() {
        assert_eq!("good".parse::<Health>().unwrap(), Health::Good);
        assert_eq!("over voltage".parse::<Health>().unwrap(), Health::OverVoltage);
        assert_eq!("over_voltage".parse::<Health>().unwrap(), Health::OverVoltage);
        assert_eq!("Overheat".parse::<Health>().unwrap(), Health::Overheat);
        assert_eq!("cold".parse::<Health>().unwrap(), Health::Other);
    }

    #[test]
    fn charger_and_screen_reject_garbage() {
        assert_eq!("ac main".parse::<Charger>().unwrap(), Charger::Ac);
        assert!("wireless".parse::<Charger>().is_err());
        assert!("dim".parse::<Screen>().is_err());
    }

    #[test]
    fn validation_bounds() {
        let mut s = sample(50, 0.0);
        assert!(s.validate().is_ok());
        s.voltage_mv = 9999;
        assert_eq!(s.validate().unwrap_err(), "voltage out of range");
        s.voltage_mv = 4000;
        s.temperature_c = 120.0;
        assert_eq!(s.validate().unwrap_err(), "temperature out of range");
    }

    #[test]
    fn closed_event_excludes_next_opening_sample() {
        let step = |a: u8, b: u8, t: f64| ChargeStep {
            first: sample(a, t),
            second: sample(b, t + 36.0),
            delta_soc: i32::from(b) - i32::from(a),
            delta_t: 36.0,
            c_rate: 1.0,
        };
        let mut ev = ChargingEvent {
            event_id: 1,
            user_id: "u".into(),
            model: "m".into(),
            steps: vec![step(10, 11, 0.0), step(11, 12, 36.0)],
            start_time: 0.0,
            end_time: 72.0,
            closed: false,
        };
        let socs: Vec<u8> = ev.samples().map(|s| s.soc).collect();
        assert_eq!(socs, vec![10, 11, 12]);
        assert_eq!(ev.rate_steps(false).count(), 2);

        ev.closed = true;
        let socs: Vec<u8> = ev.samples().map(|s| s.soc).collect();
        assert_eq!(socs, vec![10, 11]);
        assert_eq!(ev.rate_steps(false).count(), 1);
        assert_eq!(ev.rate_steps(true).count(), 2);
    }

    #[test]
    fn enum_wire_names() {
        let s = sample(99, 1.5);
        let json = serde_json::to_string(&s).unwrap();
        assert!(json.contains("\"time\":1.5"));
        assert!(json.contains("\"temp_c\":29.0"));
        assert!(json.contains("\"health\":\"good\""));
        assert!(json.contains("\"charger\":\"ac\""));
        let back: BatterySample = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
    }
}
