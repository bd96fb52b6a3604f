//! Glitch-filter threshold sweeps and direct GPIO profile comparison.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{EdgeCapture, ProfileSample, TrialRecords};
use crate::pipeline::{pair_captures, run_pipeline, PipelineConfig, PipelineError};
use crate::pulse::Status;
use crate::residual::{median_i64, PlatformCalibration};

/// The thirteen thresholds swept by default, in ns.
pub const DEFAULT_SWEEP_NS: [u64; 13] = [0, 25, 50, 75, 100, 125, 150, 175, 200, 250, 500, 1000, 2000];
/// Threshold recommended in reports.
pub const RECOMMENDED_FILTER_NS: u64 = 100;
/// Leading profile iterations discarded as warm-up.
pub const DEFAULT_PROFILE_WARMUP: usize = 20;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SensitivityError {
    #[error("need at least 2 profile samples after excluding {warmup} warm-up iterations, have {available}")]
    InsufficientSamples { available: usize, warmup: usize },
    #[error("calibrated constant is zero; coverage is undefined")]
    ZeroConstant,
    #[error("no thresholds to sweep")]
    NoThresholds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold_ns: u64,
    pub pair_count: usize,
    pub status: Status,
    pub violations: usize,
    /// Pooled median residual; only when the capture aligns with the log.
    pub median_delta_ns: Option<f64>,
    /// Mean of per-trial medians; only when the capture aligns.
    pub c_p_ns: Option<f64>,
}

/// One row per threshold, in the order given. A row passes when pairing is
/// clean, the pair count matches `expected_count` and the pulses align with
/// the log.
pub fn filter_sweep(
    captures: &[EdgeCapture],
    trials: &[TrialRecords],
    thresholds: &[u64],
    expected_count: usize,
    base: &PipelineConfig,
) -> Result<Vec<SweepRow>, SensitivityError> {
    if thresholds.is_empty() {
        return Err(SensitivityError::NoThresholds);
    }
    Ok(thresholds
        .iter()
        .map(|&threshold_ns| {
            let config = PipelineConfig {
                filter_ns: threshold_ns,
                ..*base
            };
            let (pairing, _) = pair_captures(captures, expected_count, &config);
            let mut row = SweepRow {
                threshold_ns,
                pair_count: pairing.pair_count,
                status: pairing.status,
                violations: pairing.violations.len(),
                median_delta_ns: None,
                c_p_ns: None,
            };
            if row.status == Status::Pass {
                match run_pipeline(captures, trials, &config) {
                    Ok(run) => {
                        row.median_delta_ns = run.pooled_median_ns();
                        row.c_p_ns = Some(
                            run.stats.iter().map(|s| s.median_ns).sum::<f64>()
                                / run.stats.len() as f64,
                        );
                    }
                    Err(PipelineError::Residual(_)) => {}
                    Err(_) => row.status = Status::Fail,
                }
            }
            row
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileSummary {
    pub n: usize,
    pub med_high_ns: f64,
    pub med_low_ns: f64,
    /// Median of the per-iteration sum, not the sum of the medians.
    pub med_sum_ns: f64,
}

pub fn profile_summary(
    samples: &[ProfileSample],
    warmup_exclude: usize,
) -> Result<ProfileSummary, SensitivityError> {
    let kept = samples.get(warmup_exclude..).unwrap_or(&[]);
    if kept.len() < 2 {
        return Err(SensitivityError::InsufficientSamples {
            available: samples.len(),
            warmup: warmup_exclude,
        });
    }
    let high: Vec<i64> = kept.iter().map(|s| s.high_ns as i64).collect();
    let low: Vec<i64> = kept.iter().map(|s| s.low_ns as i64).collect();
    let sum: Vec<i64> = kept.iter().map(|s| (s.high_ns + s.low_ns) as i64).collect();
    Ok(ProfileSummary {
        n: kept.len(),
        med_high_ns: median_i64(&high).expect("nonempty"),
        med_low_ns: median_i64(&low).expect("nonempty"),
        med_sum_ns: median_i64(&sum).expect("nonempty"),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileComparison {
    pub med_high_ns: f64,
    pub med_low_ns: f64,
    pub med_sum_ns: f64,
    pub c_p_abs_ns: f64,
    /// `med_sum / |C_p|`
    pub coverage_ratio: f64,
    /// `med_sum - |C_p|`; positive when the profile over-predicts.
    pub residual_ns: f64,
    /// `residual / |C_p|`
    pub over_prediction_fraction: f64,
}

pub fn profile_compare(
    summary: &ProfileSummary,
    calibration: &PlatformCalibration,
) -> Result<ProfileComparison, SensitivityError> {
    compare_to_constant(summary, calibration.c_p_ns)
}

pub fn compare_to_constant(
    summary: &ProfileSummary,
    c_p_ns: f64,
) -> Result<ProfileComparison, SensitivityError> {
    let c_p_abs_ns = c_p_ns.abs();
    if c_p_abs_ns == 0.0 || !c_p_abs_ns.is_finite() {
        return Err(SensitivityError::ZeroConstant);
    }
    let residual_ns = summary.med_sum_ns - c_p_abs_ns;
    Ok(ProfileComparison {
        med_high_ns: summary.med_high_ns,
        med_low_ns: summary.med_low_ns,
        med_sum_ns: summary.med_sum_ns,
        c_p_abs_ns,
        coverage_ratio: summary.med_sum_ns / c_p_abs_ns,
        residual_ns,
        over_prediction_fraction: residual_ns / c_p_abs_ns,
    })
}
