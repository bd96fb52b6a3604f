//! Validation gates over residual series.
//!
//! The platform-aware gate tests `|delta - C_p| <= tau`; the uniform gate
//! tests `|delta| <= tau` and exists mostly to show why it cannot serve two
//! platforms with different constants at once.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::residual::{median_i64, ResidualSeries};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    PlatformAware,
    UniformRaw,
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum,
)]
#[serde(rename_all = "snake_case")]
pub enum GateStatistic {
    PerInference,
    #[default]
    TrialMedian,
}

impl fmt::Display for GateMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GateMode::PlatformAware => "platform-aware",
            GateMode::UniformRaw => "uniform",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    pub mode: GateMode,
    pub tolerance_ns: f64,
    /// Required in platform-aware mode.
    pub constant_ns: Option<f64>,
    pub statistic: GateStatistic,
}

impl GateConfig {
    pub fn platform_aware(constant_ns: f64, tolerance_ns: f64) -> Self {
        GateConfig {
            mode: GateMode::PlatformAware,
            tolerance_ns,
            constant_ns: Some(constant_ns),
            statistic: GateStatistic::default(),
        }
    }

    pub fn uniform(tolerance_ns: f64) -> Self {
        GateConfig {
            mode: GateMode::UniformRaw,
            tolerance_ns,
            constant_ns: None,
            statistic: GateStatistic::default(),
        }
    }

    pub fn with_statistic(mut self, statistic: GateStatistic) -> Self {
        self.statistic = statistic;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GateError {
    #[error("platform-aware gate needs a calibrated constant")]
    MissingConstant,
    #[error("tolerance must be a nonnegative number, got {0}")]
    BadTolerance(f64),
    #[error("no residuals to gate")]
    NoResiduals,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateVerdict {
    pub accepted: bool,
    /// Signed residual with the largest magnitude.
    pub worst_residual_ns: f64,
    pub failing_fraction: f64,
    pub tested: usize,
    pub reason: String,
}

impl GateVerdict {
    /// Distance from the worst residual to the bound; negative on reject.
    pub fn margin_ns(&self, tolerance_ns: f64) -> f64 {
        tolerance_ns - self.worst_residual_ns.abs()
    }
}

pub fn evaluate_gate(
    series: &[ResidualSeries],
    config: &GateConfig,
) -> Result<GateVerdict, GateError> {
    if !(config.tolerance_ns >= 0.0) {
        return Err(GateError::BadTolerance(config.tolerance_ns));
    }
    let center = match config.mode {
        GateMode::PlatformAware => config.constant_ns.ok_or(GateError::MissingConstant)?,
        GateMode::UniformRaw => 0.0,
    };
    let values: Vec<f64> = match config.statistic {
        GateStatistic::PerInference => series
            .iter()
            .flat_map(|s| s.deltas_ns.iter().map(|&d| d as f64))
            .collect(),
        GateStatistic::TrialMedian => series
            .iter()
            .filter_map(|s| median_i64(&s.deltas_ns))
            .collect(),
    };
    if values.is_empty() {
        return Err(GateError::NoResiduals);
    }

    let tau = config.tolerance_ns;
    let mut worst = 0.0f64;
    let mut failing = 0usize;
    for v in &values {
        let r = v - center;
        if r.abs() > worst.abs() {
            worst = r;
        }
        if r.abs() > tau {
            failing += 1;
        }
    }
    let accepted = failing == 0;
    let what = match config.statistic {
        GateStatistic::PerInference => "inferences",
        GateStatistic::TrialMedian => "trial medians",
    };
    let bound = match config.mode {
        GateMode::PlatformAware => format!("|delta - C_p| <= {:.2} us (C_p {:.2} us)", tau / 1e3, center / 1e3),
        GateMode::UniformRaw => format!("|delta| <= {:.2} us", tau / 1e3),
    };
    let reason = if accepted {
        format!(
            "all {} {what} within {bound}; worst residual {:.2} us",
            values.len(),
            worst / 1e3
        )
    } else {
        format!(
            "{failing} of {} {what} outside {bound}; worst residual {:.2} us",
            values.len(),
            worst / 1e3
        )
    };
    Ok(GateVerdict {
        accepted,
        worst_residual_ns: worst,
        failing_fraction: failing as f64 / values.len() as f64,
        tested: values.len(),
        reason,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonCell {
    pub mode: GateMode,
    pub platform: String,
    pub verdict: GateVerdict,
    /// `tau - |C_p|`: how much room the bound leaves around the platform's
    /// systematic offset.
    pub constant_headroom_ns: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateComparison {
    pub tolerance_ns: f64,
    pub statistic: GateStatistic,
    pub cells: Vec<ComparisonCell>,
}

impl GateComparison {
    pub fn cell(&self, mode: GateMode, platform: &str) -> Option<&ComparisonCell> {
        self.cells
            .iter()
            .find(|c| c.mode == mode && c.platform == platform)
    }
}

/// Runs the uniform and platform-aware gates on two platforms with one tau.
/// Cells are ordered uniform/first, uniform/second, aware/first,
/// aware/second.
pub fn gate_comparison(
    platforms: [(&str, &[ResidualSeries], f64); 2],
    tau_ns: f64,
    statistic: GateStatistic,
) -> Result<GateComparison, GateError> {
    let mut cells = Vec::with_capacity(4);
    for mode in [GateMode::UniformRaw, GateMode::PlatformAware] {
        for (name, series, constant) in &platforms {
            let config = match mode {
                GateMode::UniformRaw => GateConfig::uniform(tau_ns),
                GateMode::PlatformAware => GateConfig::platform_aware(*constant, tau_ns),
            }
            .with_statistic(statistic);
            cells.push(ComparisonCell {
                mode,
                platform: name.to_string(),
                verdict: evaluate_gate(series, &config)?,
                constant_headroom_ns: tau_ns - constant.abs(),
            });
        }
    }
    Ok(GateComparison {
        tolerance_ns: tau_ns,
        statistic,
        cells,
    })
}
