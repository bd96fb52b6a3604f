//! Per-inference residuals, per-trial statistics and the per-platform
//! constant.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::OperatingStateTag;
use crate::pulse::AlignedTrial;

/// Default multiplier applied to the worst within-trial std.
pub const DEFAULT_K_FACTOR: f64 = 2.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ResidualError {
    #[error("trial {0} has no residuals")]
    EmptySeries(String),
    #[error("no trials to summarise")]
    NoTrials,
    #[error("trials carry different operating-state tags")]
    MixedTags,
    #[error("no trial has at least two residuals, std is undefined")]
    NoDispersion,
    #[error("k factor must be positive, got {0}")]
    BadKFactor(f64),
}

/// Which software interval the wire width is compared against.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize, clap::ValueEnum,
)]
#[serde(rename_all = "lowercase")]
pub enum PerfConvention {
    /// `t3 - t0`, both GPIO calls included.
    #[default]
    Outer,
    /// `t2 - t1`, the inference call only.
    Inner,
}

impl fmt::Display for PerfConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PerfConvention::Outer => "outer",
            PerfConvention::Inner => "inner",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResidualSeries {
    pub trial_id: String,
    pub deltas_ns: Vec<i64>,
    pub perf_convention: PerfConvention,
}

/// Wire width minus the software interval for every post-warm-up item.
pub fn compute_deltas(trial: &AlignedTrial, convention: PerfConvention) -> ResidualSeries {
    let deltas_ns = trial
        .effective()
        .iter()
        .map(|item| {
            let perf = match convention {
                PerfConvention::Outer => item.record.outer_ns(),
                PerfConvention::Inner => item.record.inner_ns(),
            };
            item.pulse.width_ns as i64 - perf as i64
        })
        .collect();
    ResidualSeries {
        trial_id: trial.trial_id.clone(),
        deltas_ns,
        perf_convention: convention,
    }
}

/// Exact median of integers; half-integers are representable in `f64`.
pub fn median_i64(values: &[i64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    Some(if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] as i128 + sorted[n / 2] as i128) as f64 / 2.0
    })
}

/// Sample standard deviation (n - 1); `None` below two values.
pub fn sample_std_i64(values: &[i64]) -> Option<f64> {
    let n = values.len();
    if n < 2 {
        return None;
    }
    let sum: i128 = values.iter().map(|&v| v as i128).sum();
    let mean = sum as f64 / n as f64;
    let ss: f64 = values.iter().map(|&v| (v as f64 - mean).powi(2)).sum();
    Some((ss / (n - 1) as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialStats {
    pub trial_id: String,
    pub median_ns: f64,
    /// Absent when the trial has a single residual.
    pub sample_std_ns: Option<f64>,
    pub min_ns: i64,
    pub max_ns: i64,
    pub n: usize,
}

pub fn trial_stats(series: &ResidualSeries) -> Result<TrialStats, ResidualError> {
    let d = &series.deltas_ns;
    let median_ns =
        median_i64(d).ok_or_else(|| ResidualError::EmptySeries(series.trial_id.clone()))?;
    Ok(TrialStats {
        trial_id: series.trial_id.clone(),
        median_ns,
        sample_std_ns: sample_std_i64(d),
        min_ns: *d.iter().min().expect("nonempty"),
        max_ns: *d.iter().max().expect("nonempty"),
        n: d.len(),
    })
}

/// The calibrated constant of one platform for one session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatformCalibration {
    pub platform: OperatingStateTag,
    pub c_p_ns: f64,
    pub trial_medians_ns: Vec<f64>,
    pub median_range_ns: (f64, f64),
    pub std_range_ns: Option<(f64, f64)>,
    pub n_trials: usize,
    pub tolerance_ns: f64,
    pub k_factor: f64,
}

impl PlatformCalibration {
    pub fn median_span_ns(&self) -> f64 {
        self.median_range_ns.1 - self.median_range_ns.0
    }
}

/// Mean over trials of the per-trial median, summed in trial order.
///
/// The tolerance is derived with [`DEFAULT_K_FACTOR`] when at least one
/// trial has a std; otherwise it is left at zero for the caller to set.
pub fn platform_constant(
    stats: &[TrialStats],
    tag: OperatingStateTag,
) -> Result<PlatformCalibration, ResidualError> {
    if stats.is_empty() {
        return Err(ResidualError::NoTrials);
    }
    let trial_medians_ns: Vec<f64> = stats.iter().map(|s| s.median_ns).collect();
    let c_p_ns = trial_medians_ns.iter().sum::<f64>() / stats.len() as f64;
    let median_range_ns = min_max(trial_medians_ns.iter().copied()).expect("nonempty");
    let std_range_ns = min_max(stats.iter().filter_map(|s| s.sample_std_ns));
    let tolerance_ns = derive_tolerance(stats, DEFAULT_K_FACTOR).unwrap_or(0.0);
    Ok(PlatformCalibration {
        platform: tag,
        c_p_ns,
        trial_medians_ns,
        median_range_ns,
        std_range_ns,
        n_trials: stats.len(),
        tolerance_ns,
        k_factor: DEFAULT_K_FACTOR,
    })
}

/// `k` times the worst within-trial sample std.
pub fn derive_tolerance(stats: &[TrialStats], k: f64) -> Result<f64, ResidualError> {
    if !(k > 0.0) {
        return Err(ResidualError::BadKFactor(k));
    }
    if stats.is_empty() {
        return Err(ResidualError::NoTrials);
    }
    let worst = stats
        .iter()
        .filter_map(|s| s.sample_std_ns)
        .fold(None, |acc: Option<f64>, s| Some(acc.map_or(s, |a| a.max(s))))
        .ok_or(ResidualError::NoDispersion)?;
    Ok(k * worst)
}

fn min_max(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    values.fold(None, |acc, v| match acc {
        None => Some((v, v)),
        Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
    })
}
