//! Streaming writers for the segment, profile and behavior outputs.
//!
//! Each function makes one pass over the input through
//! [`process_users`](crate::pipeline::process_users) and writes results in
//! first-appearance order of users, so output bytes do not depend on the
//! worker count.

use std::io::Write;

use indexmap::IndexMap;
use serde::Serialize;

use crate::behavior::analyze_user as analyze_behavior;
use crate::classification::{health_summary, merge_health, HealthSummary};
use crate::config::AnalysisConfig;
use crate::curves::{write_curve, GroupKey, CURVE_HEADER};
use crate::domain::{BehaviorReport, DeviceProfile};
use crate::error::Result;
use crate::ingestion::{filter_samples, format_f64};
use crate::pipeline::{
    Evidence, GroupAccumulator, InputSet, ProfileResult, ScanSummary,
};
use crate::segmentation::{rate_samples, segment_user, write_labeled_steps, LABELED_STEP_HEADER};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SegmentCounts {
    pub users: usize,
    pub events: usize,
    pub steps: usize,
    pub rates: usize,
}

/// Writes the labeled-step CSV and, optionally, a `user,event_id,c_rate`
/// rate CSV.
pub fn export_segments<W: Write, R: Write>(
    input: &InputSet,
    scan: &ScanSummary,
    cfg: &AnalysisConfig,
    jobs: usize,
    steps_out: W,
    rates_out: Option<R>,
) -> Result<SegmentCounts> {
    let mut steps = csv::Writer::from_writer(steps_out);
    steps.write_record(LABELED_STEP_HEADER)?;
    let mut rates = rates_out.map(csv::Writer::from_writer);
    if let Some(w) = rates.as_mut() {
        w.write_record(["user", "event_id", "c_rate"])?;
    }
    let mut counts = SegmentCounts::default();
    crate::pipeline::process_users(
        input,
        scan,
        jobs,
        |samples| {
            let kept = filter_samples(samples, &cfg.filter);
            segment_user(&kept, cfg.segmentation.termination_c)
        },
        |events| {
            if events.is_empty() {
                return Ok(());
            }
            counts.users += 1;
            counts.events += events.len();
            counts.steps += write_labeled_steps(&mut steps, &events)?;
            if let Some(w) = rates.as_mut() {
                let samples = rate_samples(&events, cfg.segmentation.include_terminal, cfg.per_event_mean);
                counts.rates += samples.len();
                for (user, event_id, rate) in samples {
                    w.write_record([user.to_string(), event_id.to_string(), format_f64(rate)])?;
                }
            }
            Ok(())
        },
    )?;
    steps.flush()?;
    if let Some(mut w) = rates {
        w.flush()?;
    }
    Ok(counts)
}

/// One line of the profile JSONL.
#[derive(Serialize)]
pub struct ProfileRecord<'a> {
    #[serde(flatten)]
    pub profile: &'a DeviceProfile,
    pub evidence: &'a Evidence,
    pub config: &'a AnalysisConfig,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ProfileCounts {
    pub users: usize,
    pub profiles: usize,
    pub curve_rows: usize,
    pub health: HealthSummary,
}

fn write_profile<P: Write, C: Write>(
    result: &ProfileResult,
    cfg: &AnalysisConfig,
    profiles: &mut P,
    curves: &mut csv::Writer<C>,
    counts: &mut ProfileCounts,
) -> Result<()> {
    let record = ProfileRecord {
        profile: &result.profile,
        evidence: &result.evidence,
        config: cfg,
    };
    serde_json::to_writer(&mut *profiles, &record)?;
    profiles.write_all(b"\n")?;
    for curve in &result.curves {
        counts.curve_rows += write_curve(curves, &result.profile.group, curve)?;
    }
    counts.profiles += 1;
    Ok(())
}

enum Grouped {
    Device(Box<ProfileResult>),
    Model(Box<GroupAccumulator>),
}

/// Writes profile JSONL and curve CSV. Device profiles are written as users
/// complete; model profiles once the input is exhausted.
pub fn export_profiles<P: Write, C: Write>(
    input: &InputSet,
    scan: &ScanSummary,
    cfg: &AnalysisConfig,
    jobs: usize,
    profiles_out: P,
    curves_out: C,
) -> Result<ProfileCounts> {
    let mut profiles = std::io::BufWriter::new(profiles_out);
    let mut curves = csv::Writer::from_writer(curves_out);
    curves.write_record(CURVE_HEADER)?;
    let mut counts = ProfileCounts::default();
    let mut models: IndexMap<String, GroupAccumulator> = IndexMap::new();

    crate::pipeline::process_users(
        input,
        scan,
        jobs,
        |samples| {
            let health = health_summary(samples.iter().filter(|s| {
                cfg.filter.model.as_deref().is_none_or(|m| &*s.model == m)
            }));
            let kept = filter_samples(samples, &cfg.filter);
            let events = segment_user(&kept, cfg.segmentation.termination_c);
            let result = events.first().map(|ev| {
                let acc = GroupAccumulator::from_events(&ev.user_id, &ev.model, &events, cfg);
                match cfg.group {
                    GroupKey::Device => Grouped::Device(Box::new(acc.into_profile(cfg))),
                    GroupKey::Model => Grouped::Model(Box::new(acc)),
                }
            });
            (health, result)
        },
        |(health, result)| {
            merge_health(&mut counts.health, &health);
            match result {
                None => {}
                Some(Grouped::Device(profile)) => {
                    counts.users += 1;
                    write_profile(&profile, cfg, &mut profiles, &mut curves, &mut counts)?;
                }
                Some(Grouped::Model(acc)) => {
                    counts.users += 1;
                    models.entry(acc.group.clone()).or_default().merge(*acc);
                }
            }
            Ok(())
        },
    )?;
    for acc in models.into_values() {
        let result = acc.into_profile(cfg);
        write_profile(&result, cfg, &mut profiles, &mut curves, &mut counts)?;
    }
    profiles.flush()?;
    curves.flush()?;
    Ok(counts)
}

/// Writes the health table as CSV.
pub fn write_health<W: Write>(writer: W, health: &HealthSummary) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["health", "voltage_min", "voltage_max", "temp_min", "temp_max", "count"])?;
    for (h, row) in health {
        w.write_record([
            h.to_string(),
            row.voltage_min.to_string(),
            row.voltage_max.to_string(),
            format_f64(row.temp_min),
            format_f64(row.temp_max),
            row.count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct BehaviorRecord<'a> {
    #[serde(flatten)]
    report: &'a BehaviorReport,
    totals: BehaviorTotals,
    config: &'a AnalysisConfig,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct BehaviorTotals {
    pub fluctuation_episodes: usize,
    pub fluctuation_repetitions: u64,
    pub full_plugged_episodes: usize,
    pub full_plugged_s: f64,
    pub maintenance_cycles: u64,
}

impl BehaviorTotals {
    pub fn of(report: &BehaviorReport) -> Self {
        BehaviorTotals {
            fluctuation_episodes: report.fluctuation_episodes.len(),
            fluctuation_repetitions: report.fluctuation_episodes.iter().map(|e| u64::from(e.repetitions)).sum(),
            full_plugged_episodes: report.full_plugged_episodes.len(),
            full_plugged_s: report.full_plugged_episodes.iter().map(|e| e.duration_s).sum(),
            maintenance_cycles: report
                .full_plugged_episodes
                .iter()
                .map(|e| u64::from(e.maintenance_cycles))
                .sum(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BehaviorCounts {
    pub users: usize,
    pub users_with_episodes: usize,
}

/// Writes one behavior record per user, including users without episodes.
pub fn export_behavior<W: Write>(
    input: &InputSet,
    scan: &ScanSummary,
    cfg: &AnalysisConfig,
    jobs: usize,
    out: W,
) -> Result<BehaviorCounts> {
    let mut w = std::io::BufWriter::new(out);
    let mut counts = BehaviorCounts::default();
    crate::pipeline::process_users(
        input,
        scan,
        jobs,
        |samples| {
            let samples: Vec<_> = match &cfg.filter.model {
                Some(m) => samples.into_iter().filter(|s| &*s.model == m).collect(),
                None => samples,
            };
            analyze_behavior(&samples, &cfg.behavior)
        },
        |report| {
            let Some(report) = report else { return Ok(()) };
            counts.users += 1;
            counts.users_with_episodes += usize::from(!report.is_empty());
            let record = BehaviorRecord {
                report: &report,
                totals: BehaviorTotals::of(&report),
                config: cfg,
            };
            serde_json::to_writer(&mut w, &record)?;
            w.write_all(b"\n")?;
            Ok(())
        },
    )?;
    w.flush()?;
    Ok(counts)
}
