//! Capture + log to residuals: filter, pair, segment, align, difference.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{EdgeCapture, OperatingStateTag, TrialRecords};
use crate::pulse::{
    align, glitch_filter, pair_edges, segment_trials, AlignError, AlignedTrial, PairingOutcome,
    Status, DEFAULT_GAP_THRESHOLD_NS, DEFAULT_WARMUP_EXCLUDE,
};
use crate::residual::{
    compute_deltas, derive_tolerance, platform_constant, trial_stats, PerfConvention,
    PlatformCalibration, ResidualError, ResidualSeries, TrialStats, DEFAULT_K_FACTOR,
};

/// Filter threshold used when none is given (100 ns).
pub const DEFAULT_FILTER_NS: u64 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub filter_ns: u64,
    pub gap_ns: u64,
    pub warmup_exclude: usize,
    pub convention: PerfConvention,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            filter_ns: DEFAULT_FILTER_NS,
            gap_ns: DEFAULT_GAP_THRESHOLD_NS,
            warmup_exclude: DEFAULT_WARMUP_EXCLUDE,
            convention: PerfConvention::Outer,
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("strict-ordering alignment FAIL: {pair_count} pairs (expected {expected}), {violations} ordering violations")]
    Pairing {
        pair_count: usize,
        expected: usize,
        violations: usize,
        outcome: Box<PairingOutcome>,
    },
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Residual(#[from] ResidualError),
}

impl PipelineError {
    /// True for failures of the capture to line up with the log, as opposed
    /// to statistics that cannot be formed.
    pub fn is_alignment_failure(&self) -> bool {
        matches!(self, PipelineError::Pairing { .. } | PipelineError::Align(_))
    }
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub pairing: PairingOutcome,
    pub aligned: Vec<AlignedTrial>,
    pub series: Vec<ResidualSeries>,
    pub stats: Vec<TrialStats>,
}

impl PipelineRun {
    pub fn calibrate(
        &self,
        tag: OperatingStateTag,
        k_factor: f64,
        tau_override_ns: Option<f64>,
    ) -> Result<PlatformCalibration, ResidualError> {
        let mut cal = platform_constant(&self.stats, tag)?;
        cal.k_factor = k_factor;
        cal.tolerance_ns = match tau_override_ns {
            Some(tau) => tau,
            None => derive_tolerance(&self.stats, k_factor)?,
        };
        Ok(cal)
    }

    /// Median over every post-warm-up residual of every trial.
    pub fn pooled_median_ns(&self) -> Option<f64> {
        let all: Vec<i64> = self
            .series
            .iter()
            .flat_map(|s| s.deltas_ns.iter().copied())
            .collect();
        crate::residual::median_i64(&all)
    }
}

/// Filters and pairs each capture. With a single capture, trials are found by
/// gap segmentation; with several, each capture is one trial.
pub fn pair_captures(
    captures: &[EdgeCapture],
    expected: usize,
    config: &PipelineConfig,
) -> (PairingOutcome, Vec<Vec<crate::pulse::PulsePair>>) {
    let outcomes: Vec<PairingOutcome> = captures
        .iter()
        .map(|c| pair_edges(&glitch_filter(c, config.filter_ns), None))
        .collect();
    let segments = if outcomes.len() == 1 {
        segment_trials(&outcomes[0].pairs, config.gap_ns)
    } else {
        outcomes.iter().map(|o| o.pairs.clone()).collect()
    };
    let mut pairs = Vec::new();
    let mut violations = Vec::new();
    for o in outcomes {
        pairs.extend(o.pairs);
        violations.extend(o.violations);
    }
    let pair_count = pairs.len();
    let status = if violations.is_empty() && pair_count == expected {
        Status::Pass
    } else {
        Status::Fail
    };
    (
        PairingOutcome {
            pairs,
            pair_count,
            violations,
            status,
        },
        segments,
    )
}

pub fn run_pipeline(
    captures: &[EdgeCapture],
    trials: &[TrialRecords],
    config: &PipelineConfig,
) -> Result<PipelineRun, PipelineError> {
    let expected: usize = trials.iter().map(|t| t.records.len()).sum();
    let (pairing, segments) = pair_captures(captures, expected, config);
    if pairing.status == Status::Fail {
        return Err(PipelineError::Pairing {
            pair_count: pairing.pair_count,
            expected,
            violations: pairing.violations.len(),
            outcome: Box::new(pairing),
        });
    }
    let aligned = align(trials, &segments, config.warmup_exclude)?;
    let series: Vec<ResidualSeries> = aligned
        .iter()
        .map(|t| compute_deltas(t, config.convention))
        .collect();
    let stats = series
        .iter()
        .map(trial_stats)
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PipelineRun {
        pairing,
        aligned,
        series,
        stats,
    })
}

/// Shorthand for the common default-k calibration.
pub fn calibrate_default(
    run: &PipelineRun,
    tag: OperatingStateTag,
) -> Result<PlatformCalibration, ResidualError> {
    run.calibrate(tag, DEFAULT_K_FACTOR, None)
}
