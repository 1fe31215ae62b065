//! Corpus-level summary combining profiles, rates, health and behavior.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use indexmap::IndexMap;
use serde::Serialize;

use crate::classification::{merge_health, HealthSummary};
use crate::config::AnalysisConfig;
use crate::curves::quantile_sorted;
use crate::domain::{FuelGauge, Technique, Variant};
use crate::pipeline::{ProfileResult, ScanSummary, UserAnalysis};
use crate::segmentation::rate_samples;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Share {
    pub count: usize,
    /// Percent of the stated denominator.
    pub pct: f64,
}

impl Share {
    fn of(count: usize, total: usize) -> Self {
        let pct = if total == 0 {
            0.0
        } else {
            100.0 * count as f64 / total as f64
        };
        Share { count, pct }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossSummary {
    /// Profiles with a capacity-loss estimate.
    pub evaluated: usize,
    pub band: (f64, f64),
    /// Share of evaluated profiles whose loss lies in `band`, inclusive.
    pub in_band: Share,
    pub mean_pct: Option<f64>,
    pub median_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateSummary {
    pub per_event_mean: bool,
    pub count: usize,
    pub quantiles: Vec<(f64, f64)>,
    pub above_1c: Share,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BehaviorSummary {
    pub users: usize,
    pub users_with_fluctuation: Share,
    pub fluctuation_episodes: usize,
    pub active_use_episodes: usize,
    /// Episode count per repetition count.
    pub repetition_histogram: BTreeMap<u32, usize>,
    /// Per-user total repetitions at the configured tail quantile.
    pub repetition_tail_cut: Option<f64>,
    pub users_above_tail_cut: Share,
    pub users_full_plugged: Share,
    pub full_plugged_episodes: usize,
    pub maintenance_cycles: u64,
    pub full_plugged_hours: f64,
    pub wasted_energy_mah: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSummary {
    pub devices: usize,
    pub majority_technique: Technique,
    /// Share of the model's devices carrying the majority label.
    pub agreement: Share,
}

#[derive(Debug, Clone, Serialize)]
pub struct CorpusReport {
    pub samples_read: u64,
    pub rejected_lines: usize,
    pub users: usize,
    pub events: usize,
    pub profiles: usize,
    pub techniques: BTreeMap<Technique, Share>,
    /// Quick plus FastPulse.
    pub fast_techniques: Share,
    pub variants: BTreeMap<Variant, Share>,
    pub fuel_gauges: BTreeMap<FuelGauge, Share>,
    pub capacity_loss: LossSummary,
    pub rates: RateSummary,
    pub health: HealthSummary,
    pub behavior: BehaviorSummary,
    pub models: IndexMap<String, ModelSummary>,
    pub config: AnalysisConfig,
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_unstable_by(f64::total_cmp);
    v
}

/// Summarises per-user analyses and their device profiles.
pub fn build_report(
    scan: &ScanSummary,
    analyses: &[UserAnalysis],
    profiles: &[ProfileResult],
    cfg: &AnalysisConfig,
) -> CorpusReport {
    let n = profiles.len();
    let count_where = |f: &dyn Fn(&ProfileResult) -> bool| profiles.iter().filter(|p| f(p)).count();

    let techniques = Technique::ALL
        .iter()
        .map(|&t| (t, Share::of(count_where(&|p| p.profile.technique == t), n)))
        .filter(|(_, s)| s.count > 0)
        .collect();
    let fast_techniques = Share::of(
        count_where(&|p| matches!(p.profile.technique, Technique::Quick | Technique::FastPulse)),
        n,
    );
    let variants = [Variant::CvFirst, Variant::CcTail, Variant::FastRate]
        .into_iter()
        .map(|v| (v, Share::of(count_where(&|p| p.profile.variants.contains(&v)), n)))
        .collect();
    let fuel_gauges = [FuelGauge::CoulombCounter, FuelGauge::VoltageBased, FuelGauge::Inconclusive]
        .into_iter()
        .map(|g| (g, Share::of(count_where(&|p| p.profile.fuel_gauge == g), n)))
        .collect();

    let losses = sorted(profiles.iter().filter_map(|p| p.profile.capacity_loss_pct).collect());
    let (lo, hi) = cfg.report.loss_band;
    let capacity_loss = LossSummary {
        evaluated: losses.len(),
        band: cfg.report.loss_band,
        in_band: Share::of(losses.iter().filter(|&&l| lo <= l && l <= hi).count(), losses.len()),
        mean_pct: (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64),
        median_pct: quantile_sorted(&losses, 0.5),
    };

    let rate_values: Vec<f64> = analyses
        .iter()
        .flat_map(|a| {
            rate_samples(&a.events, cfg.segmentation.include_terminal, cfg.per_event_mean)
                .into_iter()
                .map(|(_, _, r)| r)
        })
        .collect();
    let rate_values = sorted(rate_values);
    let rates = RateSummary {
        per_event_mean: cfg.per_event_mean,
        count: rate_values.len(),
        quantiles: cfg
            .report
            .rate_quantiles
            .iter()
            .filter_map(|&q| quantile_sorted(&rate_values, q).map(|v| (q, v)))
            .collect(),
        above_1c: Share::of(rate_values.iter().filter(|&&r| r > 1.0).count(), rate_values.len()),
    };

    let mut health = HealthSummary::new();
    for a in analyses {
        merge_health(&mut health, &a.health);
    }

    let mut models: IndexMap<String, BTreeMap<Technique, usize>> = IndexMap::new();
    for p in profiles {
        *models
            .entry(p.profile.model.to_string())
            .or_default()
            .entry(p.profile.technique)
            .or_default() += 1;
    }
    let models = models
        .into_iter()
        .map(|(model, counts)| {
            let devices = counts.values().sum();
            // ties resolve to the earlier technique in declaration order
            let (majority, top) = counts
                .iter()
                .fold((Technique::Unknown, 0), |best, (&t, &c)| if c > best.1 { (t, c) } else { best });
            (
                model,
                ModelSummary {
                    devices,
                    majority_technique: majority,
                    agreement: Share::of(top, devices),
                },
            )
        })
        .collect();

    CorpusReport {
        samples_read: scan.samples,
        rejected_lines: scan.rejected.len(),
        users: analyses.len(),
        events: analyses.iter().map(|a| a.events.len()).sum(),
        profiles: n,
        techniques,
        fast_techniques,
        variants,
        fuel_gauges,
        capacity_loss,
        rates,
        health,
        behavior: behavior_summary(analyses, cfg),
        models,
        config: cfg.clone(),
    }
}

fn behavior_summary(analyses: &[UserAnalysis], cfg: &AnalysisConfig) -> BehaviorSummary {
    let reports: Vec<_> = analyses.iter().filter_map(|a| a.behavior.as_ref()).collect();
    let users = reports.len();
    let mut histogram = BTreeMap::new();
    let mut per_user_reps = Vec::with_capacity(users);
    let mut active = 0;
    for r in &reports {
        let mut total = 0u64;
        for ep in &r.fluctuation_episodes {
            *histogram.entry(ep.repetitions).or_insert(0) += 1;
            total += u64::from(ep.repetitions);
            active += usize::from(ep.active_use);
        }
        per_user_reps.push(total as f64);
    }
    let per_user_reps = sorted(per_user_reps);
    let tail_cut = quantile_sorted(&per_user_reps, cfg.report.fluctuation_tail_quantile)
        .filter(|&c| c > 0.0);
    let above = tail_cut.map_or(0, |c| per_user_reps.iter().filter(|&&r| r > c).count());
    let full = reports.iter().flat_map(|r| &r.full_plugged_episodes);
    let wasted = cfg
        .behavior
        .capacity_mah
        .map(|_| reports.iter().filter_map(|r| r.wasted_energy_estimate).sum());
    BehaviorSummary {
        users,
        users_with_fluctuation: Share::of(
            reports.iter().filter(|r| !r.fluctuation_episodes.is_empty()).count(),
            users,
        ),
        fluctuation_episodes: histogram.values().sum(),
        active_use_episodes: active,
        repetition_histogram: histogram,
        repetition_tail_cut: tail_cut,
        users_above_tail_cut: Share::of(above, users),
        users_full_plugged: Share::of(
            reports.iter().filter(|r| !r.full_plugged_episodes.is_empty()).count(),
            users,
        ),
        full_plugged_episodes: full.clone().count(),
        maintenance_cycles: full.clone().map(|e| u64::from(e.maintenance_cycles)).sum(),
        full_plugged_hours: full.map(|e| e.duration_s).sum::<f64>() / 3600.0,
        wasted_energy_mah: wasted,
    }
}

fn share_row(out: &mut String, label: &str, s: &Share) {
    let _ = writeln!(out, "| {label} | {} | {:.1}% |", s.count, s.pct);
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.digits$}"))
}

impl CorpusReport {
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# Battery corpus report\n");
        let _ = writeln!(
            out,
            "{} samples read ({} rejected lines), {} users, {} charging events, {} profiles.\n",
            self.samples_read, self.rejected_lines, self.users, self.events, self.profiles
        );

        let _ = writeln!(out, "## Charging techniques\n\n| technique | profiles | share |\n|---|---|---|");
        for (t, s) in &self.techniques {
            share_row(&mut out, t.as_str(), s);
        }
        share_row(&mut out, "quick + fast_pulse", &self.fast_techniques);

        let _ = writeln!(out, "\n## Variants\n\n| variant | profiles | share |\n|---|---|---|");
        for (v, s) in &self.variants {
            share_row(&mut out, &v.to_string(), s);
        }

        let _ = writeln!(out, "\n## Fuel gauges\n\n| fuel gauge | profiles | share |\n|---|---|---|");
        for (g, s) in &self.fuel_gauges {
            share_row(&mut out, &g.to_string(), s);
        }

        let l = &self.capacity_loss;
        let _ = writeln!(
            out,
            "\n## Capacity loss\n\n{} profiles evaluated; {:.1}% ({}) lose between {}% and {}%. Mean {}%, median {}%.",
            l.evaluated,
            l.in_band.pct,
            l.in_band.count,
            l.band.0,
            l.band.1,
            opt(l.mean_pct, 2),
            opt(l.median_pct, 2)
        );

        let r = &self.rates;
        let kind = if r.per_event_mean { "per-event mean" } else { "per-step" };
        let _ = writeln!(out, "\n## Charging rates ({kind}, {} values)\n\n| quantile | C-rate |\n|---|---|", r.count);
        for (q, v) in &r.quantiles {
            let _ = writeln!(out, "| {q} | {v:.3} |");
        }
        let _ = writeln!(out, "\nAbove 1C: {:.2}%.", r.above_1c.pct);

        let _ = writeln!(
            out,
            "\n## Health\n\n| health | samples | voltage (mV) | temperature (C) |\n|---|---|---|---|"
        );
        for (h, row) in &self.health {
            let _ = writeln!(
                out,
                "| {h} | {} | {}-{} | {}-{} |",
                row.count, row.voltage_min, row.voltage_max, row.temp_min, row.temp_max
            );
        }

        let b = &self.behavior;
        let _ = writeln!(out, "\n## Behavior\n");
        let _ = writeln!(
            out,
            "- users with SOC fluctuation: {} ({:.1}%), {} episodes, {} during active use",
            b.users_with_fluctuation.count, b.users_with_fluctuation.pct, b.fluctuation_episodes, b.active_use_episodes
        );
        let _ = writeln!(
            out,
            "- fluctuation tail cut (q = {}): {} repetitions, {} users above",
            self.config.report.fluctuation_tail_quantile,
            opt(b.repetition_tail_cut, 1),
            b.users_above_tail_cut.count
        );
        let _ = writeln!(
            out,
            "- users left plugged at 100%: {} ({:.1}%), {:.1} h, {} maintenance cycles",
            b.users_full_plugged.count, b.users_full_plugged.pct, b.full_plugged_hours, b.maintenance_cycles
        );
        if let Some(w) = b.wasted_energy_mah {
            let _ = writeln!(out, "- estimated wasted energy: {w:.0} mAh");
        }

        let _ = writeln!(out, "\n## Models\n\n| model | devices | majority technique | agreement |\n|---|---|---|---|");
        for (m, s) in &self.models {
            let _ = writeln!(
                out,
                "| {m} | {} | {} | {:.1}% |",
                s.devices, s.majority_technique, s.agreement.pct
            );
        }
        if let Ok(cfg) = serde_json::to_string_pretty(&self.config) {
            let _ = writeln!(out, "\n## Configuration\n\n```json\n{cfg}\n```");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{analyze_user, build_profiles};
    use crate::synthgen::{generate_trace, TraceSpec};

    #[test]
    fn shares_follow_profiles() {
        let cfg = AnalysisConfig::default().finalize().unwrap();
        let specs = [
            (Technique::CcCv, 0.0),
            (Technique::Dlc, 5.0),
            (Technique::Dlc, 20.0),
            (Technique::Quick, 0.0),
        ];
        let analyses: Vec<UserAnalysis> = specs
            .iter()
            .enumerate()
            .map(|(i, &(t, loss))| {
                let mut spec = TraceSpec::new(t, FuelGauge::CoulombCounter);
                spec.capacity_loss_pct = loss;
                spec.user_id = format!("u{i}");
                analyze_user(generate_trace(&spec).unwrap().samples, &cfg).unwrap()
            })
            .collect();
        let profiles = build_profiles(&analyses, &cfg);
        let report = build_report(&ScanSummary::default(), &analyses, &profiles, &cfg);
        assert_eq!(report.techniques[&Technique::Dlc], Share { count: 2, pct: 50.0 });
        assert_eq!(report.fast_techniques.count, 1);
        assert_eq!(report.capacity_loss.evaluated, 3);
        assert_eq!(report.capacity_loss.in_band.count, 1);
        assert_eq!(report.models.len(), 3);
        let md = report.to_markdown();
        assert!(md.contains("| dlc | 2 | 50.0% |"));
        assert!(md.contains("\"termination_c\": 0.03"));
    }
}
