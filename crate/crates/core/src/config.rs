//! The complete set of analysis knobs, as loaded from a config file and
//! overridden by command-line flags.

use serde::{Deserialize, Serialize};

use crate::behavior::BehaviorConfig;
use crate::classification::ClassificationConfig;
use crate::curves::GroupKey;
use crate::error::{Error, Result};
use crate::ingestion::{FilterCriteria, TimeUnit};
use crate::segmentation::SegmentationConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportConfig {
    /// Quantile of per-user fluctuation repetitions reported as the tail cut.
    pub fluctuation_tail_quantile: f64,
    /// Capacity-loss range, in percent, whose device share is reported.
    pub loss_band: (f64, f64),
    pub rate_quantiles: Vec<f64>,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            fluctuation_tail_quantile: 0.98,
            loss_band: (1.0, 10.0),
            rate_quantiles: vec![0.1, 0.25, 0.5, 0.75, 0.9],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub time_unit: TimeUnit,
    pub filter: FilterCriteria,
    pub segmentation: SegmentationConfig,
    pub classification: ClassificationConfig,
    pub behavior: BehaviorConfig,
    pub group: GroupKey,
    /// Export one mean rate per event instead of one rate per step.
    pub per_event_mean: bool,
    pub report: ReportConfig,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            time_unit: TimeUnit::Seconds,
            filter: FilterCriteria::analysis_default(),
            segmentation: SegmentationConfig::default(),
            classification: ClassificationConfig::default(),
            behavior: BehaviorConfig::default(),
            group: GroupKey::Device,
            per_event_mean: false,
            report: ReportConfig::default(),
        }
    }
}

impl AnalysisConfig {
    /// Checks ranges and propagates shared settings; call after all
    /// overrides are applied.
    pub fn finalize(mut self) -> Result<Self> {
        let bad = |m: String| Err(Error::Config(m));
        let t = self.segmentation.termination_c;
        if !(t.is_finite() && t > 0.0) {
            return bad(format!("termination_c must be positive, got {t}"));
        }
        self.classification.bands.validate()?;
        let fg = &self.classification.fuel_gauge;
        if fg.cv_threshold.is_nan() || fg.cv_threshold <= 0.0 || fg.soc_window.0 > fg.soc_window.1 {
            return bad("fuel_gauge needs a positive cv_threshold and an ordered soc_window".into());
        }
        let pulse = &self.classification.pulse;
        if pulse.smoothing_window == 0 || pulse.soc_window.0 > pulse.soc_window.1 {
            return bad("pulse needs smoothing_window >= 1 and an ordered soc_window".into());
        }
        if self.classification.min_final_soc > 100 {
            return bad("min_final_soc must be at most 100".into());
        }
        if let Some(cap) = self.behavior.capacity_mah {
            if cap.is_nan() || cap <= 0.0 {
                return bad(format!("capacity_mah must be positive, got {cap}"));
            }
        }
        if self.behavior.maintenance_pct_per_cycle.is_nan() || self.behavior.maintenance_pct_per_cycle < 0.0 {
            return bad("maintenance_pct_per_cycle must be non-negative".into());
        }
        let q = self.report.fluctuation_tail_quantile;
        if !(0.0..=1.0).contains(&q) || self.report.rate_quantiles.iter().any(|q| !(0.0..=1.0).contains(q)) {
            return bad("report quantiles must lie in [0, 1]".into());
        }
        self.behavior.termination_c = t;
        Ok(self)
    }
}
