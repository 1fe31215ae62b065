//! End-to-end processing: per-user partitions are analysed by a worker pool
//! and aggregated into device or model profiles.
//!
//! Input files are scanned once to collect diagnostics and to check whether
//! every user's records are contiguous. If they are, the second pass holds
//! only a bounded batch of users in memory; otherwise the input is grouped
//! in memory first. Results are always delivered in first-appearance order
//! of users, whatever the worker count.

use std::collections::HashSet;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::Serialize;

use crate::behavior::analyze_user as analyze_behavior;
use crate::classification::{
    capacity_loss, classify_technique, detect_variants_from_rates, health_summary,
    infer_fuel_gauge, variant_rate_pool, FuelGaugeResult, HealthSummary, TechniqueResult, VariantReport,
};
use crate::config::AnalysisConfig;
use crate::curves::{GroupKey, LevelPool};
use crate::domain::{
    BatterySample, BehaviorReport, ChargingEvent, CurveKind, DeviceProfile, SocCurve,
};
use crate::error::{Error, Result};
use crate::ingestion::{
    filter_samples, group_by_user, Diagnostic, InputFormat, SampleReader, TimeUnit,
};
use crate::segmentation::{event_endpoints, segment_user};

/// Users handed to the worker pool at once in streaming mode.
const BATCH_USERS: usize = 1024;

/// Everything derived from one user's samples.
#[derive(Debug, Clone)]
pub struct UserAnalysis {
    pub user_id: Arc<str>,
    pub model: Arc<str>,
    pub raw_samples: usize,
    pub analysed_samples: usize,
    pub events: Vec<ChargingEvent>,
    pub health: HealthSummary,
    pub behavior: Option<BehaviorReport>,
}

/// Analyses one user's time-sorted, deduplicated samples.
///
/// Health and behavior use every sample of the user (subject only to the
/// model filter); segmentation uses the samples passing the full filter.
pub fn analyze_user(samples: Vec<BatterySample>, cfg: &AnalysisConfig) -> Option<UserAnalysis> {
    let samples: Vec<BatterySample> = match &cfg.filter.model {
        Some(m) => samples.into_iter().filter(|s| &*s.model == m).collect(),
        None => samples,
    };
    let first = samples.first()?;
    let (user_id, model) = (first.user_id.clone(), first.model.clone());
    let raw_samples = samples.len();
    let health = health_summary(&samples);
    let behavior = analyze_behavior(&samples, &cfg.behavior);
    let kept = filter_samples(samples, &cfg.filter);
    let events = segment_user(&kept, cfg.segmentation.termination_c);
    Some(UserAnalysis {
        user_id,
        model,
        raw_samples,
        analysed_samples: kept.len(),
        events,
        health,
        behavior,
    })
}

/// Per-level pools and endpoint lists for a device or a model.
#[derive(Debug, Clone, Default)]
pub struct GroupAccumulator {
    pub group: String,
    pub user_id: Option<Arc<str>>,
    pub model: Option<Arc<str>>,
    pub voltage: LevelPool,
    pub charge_time: LevelPool,
    pub temperature: LevelPool,
    pub rates: LevelPool,
    /// Final voltages of events reaching the classification level.
    pub top_voltages: Vec<i32>,
    /// Final voltages of events reaching 100%.
    pub full_voltages: Vec<i32>,
    pub event_count: usize,
    pub device_count: usize,
}

impl GroupAccumulator {
    pub fn from_user(analysis: &UserAnalysis, cfg: &AnalysisConfig) -> Self {
        Self::from_events(&analysis.user_id, &analysis.model, &analysis.events, cfg)
    }

    pub fn from_events(
        user_id: &Arc<str>,
        model: &Arc<str>,
        events: &[ChargingEvent],
        cfg: &AnalysisConfig,
    ) -> Self {
        let include_terminal = cfg.segmentation.include_terminal;
        let mut acc = GroupAccumulator {
            group: match cfg.group {
                GroupKey::Device => user_id.to_string(),
                GroupKey::Model => model.to_string(),
            },
            user_id: Some(user_id.clone()),
            model: Some(model.clone()),
            voltage: LevelPool::voltage(events),
            charge_time: LevelPool::charge_time(events, include_terminal),
            temperature: LevelPool::temperature(events),
            rates: variant_rate_pool(events, include_terminal, &cfg.classification.variants),
            event_count: events.len(),
            device_count: 1,
            ..Default::default()
        };
        for ev in events {
            if let Some(ep) = event_endpoints(ev) {
                if ep.soc_span.1 >= cfg.classification.min_final_soc {
                    acc.top_voltages.push(ep.final_voltage);
                }
                if let Some(v) = ep.full_charge_voltage {
                    acc.full_voltages.push(v);
                }
            }
        }
        acc
    }

    pub fn merge(&mut self, other: GroupAccumulator) {
        if self.device_count == 0 {
            *self = other;
            return;
        }
        if self.user_id != other.user_id {
            self.user_id = None;
        }
        self.voltage.merge(other.voltage);
        self.charge_time.merge(other.charge_time);
        self.temperature.merge(other.temperature);
        self.rates.merge(other.rates);
        self.top_voltages.extend(other.top_voltages);
        self.full_voltages.extend(other.full_voltages);
        self.event_count += other.event_count;
        self.device_count += other.device_count;
    }

    pub fn into_profile(self, cfg: &AnalysisConfig) -> ProfileResult {
        let cls = &cfg.classification;
        let voltage = self.voltage.into_curve(CurveKind::Voltage);
        let charge_time = self.charge_time.into_curve(CurveKind::ChargeTime);
        let temperature = self.temperature.into_curve(CurveKind::Temperature);

        let technique = classify_technique(&self.top_voltages, &voltage, cls);
        let variants = detect_variants_from_rates(&self.rates, &cls.variants);
        let fuel_gauge = infer_fuel_gauge(&charge_time, &cls.fuel_gauge);

        let mut reasons = Vec::new();
        if let Some(r) = &technique.reason {
            reasons.push(format!("technique: {r}"));
        }
        for (v, r) in &variants.not_evaluable {
            reasons.push(format!("variant {v}: {r}"));
        }
        if let Some(r) = &fuel_gauge.reason {
            reasons.push(format!("fuel gauge: {r}"));
        }

        let nominal = technique.technique.nominal_final_voltage();
        let full: Vec<f64> = self.full_voltages.iter().map(|&v| f64::from(v)).collect();
        let final_voltage_mean = (!full.is_empty()).then(|| full.iter().sum::<f64>() / full.len() as f64);
        let capacity_loss_pct = match nominal {
            None => {
                reasons.push(format!(
                    "capacity loss: not defined for technique {}",
                    technique.technique
                ));
                None
            }
            Some(n) => match capacity_loss(&full, f64::from(n)) {
                Ok(loss) => Some(loss),
                Err(_) => {
                    reasons.push("capacity loss: no event reached soc 100".into());
                    None
                }
            },
        };

        let profile = DeviceProfile {
            group: self.group,
            user_id: self.user_id,
            model: self.model.unwrap_or_else(|| Arc::from("")),
            technique: technique.technique,
            variants: variants.variants.clone(),
            fuel_gauge: fuel_gauge.fuel_gauge,
            initial_voltage: voltage.get(1),
            final_voltage_mean,
            nominal_final_voltage: nominal,
            capacity_loss_pct,
            event_count: self.event_count,
            device_count: self.device_count,
            reasons,
        };
        ProfileResult {
            profile,
            evidence: Evidence {
                technique,
                variants,
                fuel_gauge,
            },
            curves: [voltage, charge_time, temperature],
        }
    }
}

/// Intermediate results behind a profile's labels.
#[derive(Debug, Clone, Serialize)]
pub struct Evidence {
    pub technique: TechniqueResult,
    pub variants: VariantReport,
    pub fuel_gauge: FuelGaugeResult,
}

#[derive(Debug, Clone)]
pub struct ProfileResult {
    pub profile: DeviceProfile,
    pub evidence: Evidence,
    /// Voltage, charge-time and temperature curves.
    pub curves: [SocCurve; 3],
}

/// Builds profiles from per-user analyses, grouped as configured. Groups
/// appear in first-appearance order; users without events are skipped.
pub fn build_profiles<'a>(
    analyses: impl IntoIterator<Item = &'a UserAnalysis>,
    cfg: &AnalysisConfig,
) -> Vec<ProfileResult> {
    let mut groups: IndexMap<String, GroupAccumulator> = IndexMap::new();
    for a in analyses {
        if a.events.is_empty() {
            continue;
        }
        let acc = GroupAccumulator::from_user(a, cfg);
        groups.entry(acc.group.clone()).or_default().merge(acc);
    }
    groups
        .into_values()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|acc| acc.into_profile(cfg))
        .collect()
}

/// A rejected line together with the file it came from.
#[derive(Debug, Clone, Serialize)]
pub struct FileDiagnostic {
    pub path: PathBuf,
    #[serde(flatten)]
    pub diagnostic: Diagnostic,
}

/// What the first pass over the input found.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ScanSummary {
    pub samples: u64,
    pub users: u64,
    pub rejected: Vec<FileDiagnostic>,
    /// Every user's records form one contiguous block across the inputs.
    pub contiguous: bool,
}

/// Input files plus how to read them.
#[derive(Debug, Clone)]
pub struct InputSet {
    pub paths: Vec<PathBuf>,
    /// Overrides the extension-based guess.
    pub format: Option<InputFormat>,
    pub time_unit: TimeUnit,
}

impl InputSet {
    pub fn new(paths: Vec<PathBuf>, time_unit: TimeUnit) -> Self {
        InputSet {
            paths,
            format: None,
            time_unit,
        }
    }

    fn reader(&self, path: &Path) -> Result<SampleReader<BufReader<File>>> {
        let file = File::open(path).map_err(|e| {
            Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
        })?;
        let format = self.format.unwrap_or_else(|| InputFormat::from_path(path));
        SampleReader::new(BufReader::with_capacity(1 << 16, file), format, self.time_unit)
    }

    /// Valid samples of all files in order; rejected lines are skipped.
    fn samples(&self) -> impl Iterator<Item = Result<BatterySample>> + '_ {
        self.paths.iter().flat_map(move |p| -> Box<dyn Iterator<Item = Result<BatterySample>>> {
            match self.reader(p) {
                Ok(r) => Box::new(r.filter_map(|item| match item {
                    Ok(Ok(s)) => Some(Ok(s)),
                    Ok(Err(_)) => None,
                    Err(e) => Some(Err(e)),
                })),
                Err(e) => Box::new(std::iter::once(Err(e))),
            }
        })
    }

    /// First pass: counts, diagnostics and the contiguity check.
    pub fn scan(&self) -> Result<ScanSummary> {
        let mut summary = ScanSummary {
            contiguous: true,
            ..Default::default()
        };
        let mut seen: HashSet<Arc<str>> = HashSet::new();
        let mut current: Option<Arc<str>> = None;
        for path in &self.paths {
            for item in self.reader(path)? {
                match item? {
                    Ok(s) => {
                        summary.samples += 1;
                        if current.as_ref() != Some(&s.user_id) {
                            if !seen.insert(s.user_id.clone()) {
                                summary.contiguous = false;
                            }
                            current = Some(s.user_id);
                        }
                    }
                    Err(diagnostic) => summary.rejected.push(FileDiagnostic {
                        path: path.clone(),
                        diagnostic,
                    }),
                }
            }
        }
        summary.users = seen.len() as u64;
        Ok(summary)
    }
}

/// Runs `work` on every user's sorted, deduplicated samples and passes the
/// results to `sink` in first-appearance order of users.
///
/// `jobs` is the worker count; 0 lets the pool pick.
pub fn process_users<T, W, S>(
    input: &InputSet,
    scan: &ScanSummary,
    jobs: usize,
    work: W,
    mut sink: S,
) -> Result<()>
where
    T: Send,
    W: Fn(Vec<BatterySample>) -> T + Sync,
    S: FnMut(T) -> Result<()>,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let mut run_batch = |batch: &mut Vec<Vec<BatterySample>>| -> Result<()> {
        let results: Vec<T> = pool.install(|| {
            std::mem::take(batch)
                .into_par_iter()
                .map(|samples| work(crate::ingestion::sort_and_dedup(samples)))
                .collect()
        });
        results.into_iter().try_for_each(&mut sink)
    };

    let mut batch: Vec<Vec<BatterySample>> = Vec::new();
    if scan.contiguous {
        let mut current: Vec<BatterySample> = Vec::new();
        for s in input.samples() {
            let s = s?;
            if current.first().is_some_and(|c| c.user_id != s.user_id) {
                batch.push(std::mem::take(&mut current));
                if batch.len() >= BATCH_USERS {
                    run_batch(&mut batch)?;
                }
            }
            current.push(s);
        }
        if !current.is_empty() {
            batch.push(current);
        }
    } else {
        let all = input.samples().collect::<Result<Vec<_>>>()?;
        // group_by_user already sorts; sorting again in the worker is cheap
        batch.extend(group_by_user(all).into_values());
    }
    run_batch(&mut batch)
}

/// Convenience wrapper collecting every user's analysis.
pub fn analyze_input(
    input: &InputSet,
    scan: &ScanSummary,
    cfg: &AnalysisConfig,
    jobs: usize,
) -> Result<Vec<UserAnalysis>> {
    let mut out = Vec::new();
    process_users(
        input,
        scan,
        jobs,
        |samples| analyze_user(samples, cfg),
        |a| {
            out.extend(a);
            Ok(())
        },
    )?;
    Ok(out)
}
