//! Seeded synthetic datasets: orchestrator logs, edge captures and profile
//! logs with a configurable call-overhead model, glitch and fault injection.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{
    format_native_capture, format_orchestrator_log, format_profile_log, sample_period_ns,
    Direction, EdgeCapture, EdgeEvent, InferenceRecord, ProfileSample, DEFAULT_SAMPLE_RATE_HZ,
};
use crate::sensitivity::DEFAULT_PROFILE_WARMUP;
use crate::store::content_digest;

pub const ORCHESTRATOR_FILE: &str = "orchestrator.jsonl";
pub const CAPTURE_FILE: &str = "capture.csv";
pub const PROFILE_FILE: &str = "profile.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

const GLITCH_STREAM: u64 = u64::MAX - 1;
const PROFILE_STREAM: u64 = u64::MAX - 2;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    Config(String),
    #[error("trial {trial} inference {index}: {message}")]
    Geometry {
        trial: usize,
        index: usize,
        message: String,
    },
    #[error("glitch {0}")]
    Glitch(String),
    #[error("scenario: {0}")]
    Scenario(#[from] toml::de::Error),
    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

type Result<T> = std::result::Result<T, SynthError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedValue {
    pub value_ns: u64,
    pub weight: f64,
}

/// Duration distribution in ns. Draws below `min_ns` are clamped up to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DurationModel {
    Constant {
        value_ns: u64,
    },
    Uniform {
        median_ns: f64,
        half_width_ns: f64,
        #[serde(default)]
        min_ns: Option<f64>,
    },
    LogNormal {
        median_ns: f64,
        sigma: f64,
    },
    Laplace {
        median_ns: f64,
        scale_ns: f64,
        #[serde(default)]
        min_ns: Option<f64>,
    },
    Discrete {
        points: Vec<WeightedValue>,
    },
}

impl DurationModel {
    pub fn constant(value_ns: u64) -> Self {
        DurationModel::Constant { value_ns }
    }

    fn validate(&self, what: &str) -> Result<()> {
        let bad = |m: &str| Err(SynthError::Config(format!("{what}: {m}")));
        match self {
            DurationModel::Constant { .. } => Ok(()),
            DurationModel::Uniform {
                median_ns,
                half_width_ns,
                ..
            } if !(median_ns.is_finite() && *half_width_ns >= 0.0 && half_width_ns <= median_ns) => {
                bad("uniform needs 0 <= half_width <= median")
            }
            DurationModel::LogNormal { median_ns, sigma } if !(*median_ns > 0.0 && *sigma >= 0.0) => {
                bad("log-normal needs median > 0 and sigma >= 0")
            }
            DurationModel::Laplace {
                median_ns,
                scale_ns,
                ..
            } if !(median_ns.is_finite() && *scale_ns >= 0.0) => bad("laplace needs scale >= 0"),
            DurationModel::Discrete { points }
                if points.is_empty() || points.iter().any(|p| !(p.weight > 0.0)) =>
            {
                bad("discrete needs at least one point, all weights positive")
            }
            _ => Ok(()),
        }
    }

    /// The distribution median; dispersion scaling is applied around it.
    pub fn center_ns(&self) -> f64 {
        match self {
            DurationModel::Constant { value_ns } => *value_ns as f64,
            DurationModel::Uniform { median_ns, .. }
            | DurationModel::LogNormal { median_ns, .. }
            | DurationModel::Laplace { median_ns, .. } => *median_ns,
            DurationModel::Discrete { points } => {
                let mut sorted = points.clone();
                sorted.sort_by_key(|p| p.value_ns);
                let total: f64 = sorted.iter().map(|p| p.weight).sum();
                let mut acc = 0.0;
                for p in &sorted {
                    acc += p.weight;
                    if acc >= total / 2.0 {
                        return p.value_ns as f64;
                    }
                }
                sorted.last().map_or(0.0, |p| p.value_ns as f64)
            }
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            DurationModel::Constant { value_ns } => *value_ns as f64,
            DurationModel::Uniform {
                median_ns,
                half_width_ns,
                min_ns,
            } => {
                let x = median_ns + half_width_ns * (2.0 * rng.random::<f64>() - 1.0);
                x.max(min_ns.unwrap_or(f64::NEG_INFINITY))
            }
            DurationModel::LogNormal { median_ns, sigma } => LogNormal::new(median_ns.ln(), *sigma)
                .expect("validated")
                .sample(rng),
            DurationModel::Laplace {
                median_ns,
                scale_ns,
                min_ns,
            } => {
                // inverse CDF on u in (-1/2, 1/2)
                let u: f64 = rng.random::<f64>() - 0.5;
                let x = median_ns - scale_ns * u.signum() * (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE).ln();
                x.max(min_ns.unwrap_or(f64::NEG_INFINITY))
            }
            DurationModel::Discrete { points } => {
                let total: f64 = points.iter().map(|p| p.weight).sum();
                let mut target = rng.random::<f64>() * total;
                for p in points {
                    if target < p.weight {
                        return p.value_ns as f64;
                    }
                    target -= p.weight;
                }
                points.last().expect("validated").value_ns as f64
            }
        }
    }
}

/// Per-trial perturbation of the overhead model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialVariation {
    /// Added to every high-call duration of the trial.
    #[serde(default)]
    pub high_offset_ns: f64,
    /// Multiplies deviations of H and L from their medians.
    #[serde(default = "one")]
    pub dispersion_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for TrialVariation {
    fn default() -> Self {
        TrialVariation {
            high_offset_ns: 0.0,
            dispersion_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlitchPlacement {
    /// A short high pulse inside a low period: one extra pair when unfiltered.
    LowPeriodPulse,
    /// A duplicate rising edge shortly after a real one: an ordering violation.
    SameDirectionEdge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlitchSpec {
    pub placement: GlitchPlacement,
    pub dwell_ns: u64,
    #[serde(default = "one_count")]
    pub count: usize,
}

fn one_count() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FaultSpec {
    /// From `inference` of `trial` on, the line never falls until the trial
    /// ends; later rises are absorbed.
    StuckHigh { trial: usize, inference: usize },
    /// Constant added to every wire width.
    DeltaOffset { offset_ns: i64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub trials: usize,
    pub inferences_per_trial: usize,
    #[serde(default = "default_rate")]
    pub sample_rate_hz: u64,
    pub seed: u64,
    #[serde(default = "default_start")]
    pub start_ns: u64,
    #[serde(default = "default_trial_gap")]
    pub inter_trial_gap_ns: u64,
    pub inter_inference_gap: DurationModel,
    pub high_call: DurationModel,
    pub inference: DurationModel,
    pub low_call: DurationModel,
    /// Rise position within the high call, as a fraction of H.
    pub rise_fraction: f64,
    /// Fall position within the low call, as a fraction of L.
    pub fall_fraction: f64,
    /// Half-width of uniform jitter on both fractions.
    #[serde(default)]
    pub fraction_jitter: f64,
    #[serde(default)]
    pub trial_variation: Vec<TrialVariation>,
    #[serde(default)]
    pub glitches: Vec<GlitchSpec>,
    #[serde(default)]
    pub fault: Option<FaultSpec>,
}

fn default_rate() -> u64 {
    DEFAULT_SAMPLE_RATE_HZ
}
fn default_start() -> u64 {
    1_000_000_000
}
fn default_trial_gap() -> u64 {
    5_000_000_000
}

impl SynthConfig {
    /// A small glitch-free config with constant durations.
    pub fn simple(trials: usize, inferences_per_trial: usize, seed: u64) -> Self {
        SynthConfig {
            trials,
            inferences_per_trial,
            sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
            seed,
            start_ns: default_start(),
            inter_trial_gap_ns: default_trial_gap(),
            inter_inference_gap: DurationModel::constant(200_000),
            high_call: DurationModel::constant(10_000),
            inference: DurationModel::constant(1_200_000),
            low_call: DurationModel::constant(8_000),
            rise_fraction: 1.0,
            fall_fraction: 0.0,
            fraction_jitter: 0.0,
            trial_variation: Vec::new(),
            glitches: Vec::new(),
            fault: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SynthError::Config(m));
        if self.trials == 0 || self.inferences_per_trial == 0 {
            return bad("trials and inferences_per_trial must be positive".into());
        }
        if self.sample_rate_hz == 0 {
            return bad("sample_rate_hz must be positive".into());
        }
        for (name, f) in [("rise_fraction", self.rise_fraction), ("fall_fraction", self.fall_fraction)] {
            if !(0.0..=1.0).contains(&f) {
                return bad(format!("{name} must lie in [0, 1], got {f}"));
            }
        }
        if !(0.0..=1.0).contains(&self.fraction_jitter) {
            return bad("fraction_jitter must lie in [0, 1]".into());
        }
        if !self.trial_variation.is_empty() && self.trial_variation.len() != self.trials {
            return bad(format!(
                "trial_variation has {} entries for {} trials",
                self.trial_variation.len(),
                self.trials
            ));
        }
        if self.trial_variation.iter().any(|v| !(v.dispersion_scale >= 0.0)) {
            return bad("dispersion_scale must be nonnegative".into());
        }
        if self.inter_trial_gap_ns == 0 {
            return bad("inter_trial_gap_ns must be positive".into());
        }
        if self.glitches.iter().any(|g| g.dwell_ns == 0) {
            return bad("glitch dwell must be positive".into());
        }
        if let Some(FaultSpec::StuckHigh { trial, inference }) = self.fault {
            if trial >= self.trials || inference >= self.inferences_per_trial {
                return bad("stuck_high fault outside the dataset".into());
            }
        }
        self.inter_inference_gap.validate("inter_inference_gap")?;
        self.high_call.validate("high_call")?;
        self.inference.validate("inference")?;
        self.low_call.validate("low_call")
    }

    fn variation(&self, trial_index: usize) -> TrialVariation {
        self.trial_variation
            .get(trial_index)
            .copied()
            .unwrap_or_default()
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedTrial {
    pub records: Vec<InferenceRecord>,
    pub events: Vec<EdgeEvent>,
    /// t3 of the last inference.
    pub end_ns: u64,
}

pub fn trial_id(trial_index: usize) -> String {
    format!("trial-{:02}", trial_index + 1)
}

fn draw_duration<R: Rng>(
    model: &DurationModel,
    rng: &mut R,
    scale: f64,
    offset: f64,
    min: f64,
) -> u64 {
    let c = model.center_ns();
    let x = c + scale * (model.sample(rng) - c) + offset;
    x.round().max(min) as u64
}

/// Grid point nearest `target` inside `[lo, hi]`; when the window holds no
/// grid point, the first grid point at or after `lo` (`toward_hi`) or the
/// last at or before `hi`.
fn quantize_in_window(target: f64, lo: u64, hi: u64, q: u64, toward_hi: bool) -> u64 {
    let first = lo.div_ceil(q) * q;
    let last = hi / q * q;
    if first > last {
        return if toward_hi { first } else { last };
    }
    let nearest = ((target / q as f64).round() as u64) * q;
    nearest.clamp(first, last)
}

fn quantize(target: f64, q: u64) -> u64 {
    ((target.max(0.0) / q as f64).round() as u64) * q
}

/// One trial starting at `start_ns`: records plus wire edges on the sample
/// grid, before glitch injection.
pub fn generate_trial(
    config: &SynthConfig,
    trial_index: usize,
    start_ns: u64,
) -> Result<GeneratedTrial> {
    config.validate()?;
    let mut rng = config.rng(trial_index as u64);
    let q = sample_period_ns(config.sample_rate_hz);
    let var = config.variation(trial_index);
    let id = trial_id(trial_index);
    let stuck_from = match config.fault {
        Some(FaultSpec::StuckHigh { trial, inference }) if trial == trial_index => Some(inference),
        _ => None,
    };
    let offset_ns = match config.fault {
        Some(FaultSpec::DeltaOffset { offset_ns }) => Some(offset_ns),
        _ => None,
    };

    let mut records = Vec::with_capacity(config.inferences_per_trial);
    let mut events = Vec::with_capacity(2 * config.inferences_per_trial);
    let mut t0 = start_ns;
    for index in 0..config.inferences_per_trial {
        if index > 0 {
            t0 += draw_duration(&config.inter_inference_gap, &mut rng, 1.0, 0.0, 1.0);
        }
        let h = draw_duration(&config.high_call, &mut rng, var.dispersion_scale, var.high_offset_ns, 1.0);
        let d = draw_duration(&config.inference, &mut rng, 1.0, 0.0, 0.0);
        let l = draw_duration(&config.low_call, &mut rng, var.dispersion_scale, 0.0, 1.0);
        let jitter = config.fraction_jitter;
        let mut fraction = |base: f64| {
            if jitter > 0.0 {
                (base + jitter * (2.0 * rng.random::<f64>() - 1.0)).clamp(0.0, 1.0)
            } else {
                base
            }
        };
        let alpha = fraction(config.rise_fraction);
        let beta = fraction(config.fall_fraction);
        let (t1, t2) = (t0 + h, t0 + h + d);
        let t3 = t2 + l;

        let rise = quantize_in_window(t0 as f64 + alpha * h as f64, t0, t1, q, true);
        let fall_target = t2 as f64 + beta * l as f64;
        let fall = match offset_ns {
            Some(off) => quantize(fall_target + off as f64, q),
            None => quantize_in_window(fall_target, t2, t3, q, false),
        };
        let geometry = |message: String| SynthError::Geometry {
            trial: trial_index,
            index,
            message,
        };
        if fall <= rise {
            return Err(geometry(format!("fall {fall} ns not after rise {rise} ns")));
        }
        if let Some(prev) = events.last().map(|e: &EdgeEvent| e.timestamp_ns) {
            if rise <= prev {
                return Err(geometry(format!("rise {rise} ns not after previous edge {prev} ns")));
            }
        }

        match stuck_from {
            Some(s) if index > s => {}
            Some(s) if index == s => events.push(EdgeEvent::rising(rise)),
            _ => {
                events.push(EdgeEvent::rising(rise));
                events.push(EdgeEvent::falling(fall));
            }
        }
        records.push(InferenceRecord {
            trial_id: id.clone(),
            index: index as u32,
            t0_ns: t0,
            t1_ns: t1,
            t2_ns: t2,
            t3_ns: t3,
        });
        t0 = t3;
    }
    if stuck_from.is_some() {
        // the line is released once the trial is over
        events.push(EdgeEvent::falling(quantize(t0 as f64, q) + q));
    }
    Ok(GeneratedTrial {
        records,
        events,
        end_ns: t0,
    })
}

fn smallest_dwell(events: &[EdgeEvent]) -> Option<u64> {
    events
        .windows(2)
        .map(|w| w[1].timestamp_ns - w[0].timestamp_ns)
        .min()
}

/// Inserts the glitches at seeded positions. Every glitch dwell must be
/// shorter than the smallest real dwell, and no slot is used twice.
pub fn inject_glitches(
    events: &[EdgeEvent],
    glitches: &[GlitchSpec],
    sample_period_ns: u64,
    seed: u64,
) -> Result<Vec<EdgeEvent>> {
    let total: usize = glitches.iter().map(|g| g.count).sum();
    if total == 0 {
        return Ok(events.to_vec());
    }
    let smallest = smallest_dwell(events)
        .ok_or_else(|| SynthError::Glitch("capture has fewer than two edges".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(GLITCH_STREAM);
    let q = sample_period_ns.max(1);
    let mut used = HashSet::new();
    let mut inserted: Vec<EdgeEvent> = Vec::new();
    for g in glitches {
        if g.dwell_ns >= smallest {
            return Err(SynthError::Glitch(format!(
                "dwell {} ns is not shorter than the smallest real dwell {smallest} ns",
                g.dwell_ns
            )));
        }
        let (from, to) = match g.placement {
            GlitchPlacement::LowPeriodPulse => (Direction::Falling, Direction::Rising),
            GlitchPlacement::SameDirectionEdge => (Direction::Rising, Direction::Falling),
        };
        let slots: Vec<usize> = (0..events.len().saturating_sub(1))
            .filter(|&i| events[i].direction == from && events[i + 1].direction == to)
            .filter(|i| !used.contains(i))
            .collect();
        for _ in 0..g.count {
            let free: Vec<usize> = slots.iter().copied().filter(|i| !used.contains(i)).collect();
            if free.is_empty() {
                return Err(SynthError::Glitch(format!("no free slot for {:?}", g.placement)));
            }
            let i = free[rng.random_range(0..free.len())];
            used.insert(i);
            let (a, b) = (events[i].timestamp_ns, events[i + 1].timestamp_ns);
            match g.placement {
                GlitchPlacement::LowPeriodPulse => {
                    // central half of the low period, on the grid
                    let span = b - a;
                    let lo = (a + span / 4).div_ceil(q) * q;
                    let hi = (b - span / 4).saturating_sub(g.dwell_ns) / q * q;
                    if lo > hi || lo <= a || hi + g.dwell_ns >= b {
                        return Err(SynthError::Glitch(format!(
                            "low period [{a}, {b}] ns too short for a {} ns pulse",
                            g.dwell_ns
                        )));
                    }
                    let x = lo + rng.random_range(0..=(hi - lo) / q) * q;
                    inserted.push(EdgeEvent::rising(x));
                    inserted.push(EdgeEvent::falling(x + g.dwell_ns));
                }
                GlitchPlacement::SameDirectionEdge => {
                    let x = a + g.dwell_ns;
                    if x >= b {
                        return Err(SynthError::Glitch(format!(
                            "high period [{a}, {b}] ns too short for a {} ns edge",
                            g.dwell_ns
                        )));
                    }
                    inserted.push(EdgeEvent::rising(x));
                }
            }
        }
    }
    let mut out: Vec<EdgeEvent> = events.iter().copied().chain(inserted).collect();
    out.sort_by_key(|e| e.timestamp_ns);
    if out.windows(2).any(|w| w[0].timestamp_ns == w[1].timestamp_ns) {
        return Err(SynthError::Glitch("glitch coincides with a real edge".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileConfig {
    #[serde(default = "default_profile_samples")]
    pub samples: usize,
    #[serde(default = "default_profile_warmup")]
    pub warmup: usize,
    pub high: DurationModel,
    pub low: DurationModel,
}

fn default_profile_samples() -> usize {
    5000
}
fn default_profile_warmup() -> usize {
    DEFAULT_PROFILE_WARMUP
}

/// Direct-call profile samples; the first `warmup` iterations are warm-up by
/// position only.
pub fn generate_profile(config: &ProfileConfig, seed: u64) -> Result<Vec<ProfileSample>> {
    config.high.validate("profile.high")?;
    config.low.validate("profile.low")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(PROFILE_STREAM);
    Ok((0..config.samples)
        .map(|i| ProfileSample {
            iteration: i as u32,
            high_ns: draw_duration(&config.high, &mut rng, 1.0, 0.0, 1.0),
            low_ns: draw_duration(&config.low, &mut rng, 1.0, 0.0, 1.0),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthScenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// Platform label used by the CLI when the scenario is calibrated.
    #[serde(default)]
    pub platform: Option<String>,
    pub config: SynthConfig,
    #[serde(default)]
    pub profile: Option<ProfileConfig>,
    #[serde(default)]
    pub expected: BTreeMap<String, serde_json::Value>,
}

impl SynthScenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let s: SynthScenario = toml::from_str(text)?;
        s.config.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| SynthError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }
}

const BUILTIN: [(&str, &str); 6] = [
    ("jetson-calibrated", include_str!("../../../scenarios/jetson-calibrated.toml")),
    ("pi-calibrated", include_str!("../../../scenarios/pi-calibrated.toml")),
    ("pi-fault", include_str!("../../../scenarios/pi-fault.toml")),
    ("jetson-stuck", include_str!("../../../scenarios/jetson-stuck.toml")),
    ("pi-session-early", include_str!("../../../scenarios/pi-session-early.toml")),
    ("pi-session-mid", include_str!("../../../scenarios/pi-session-mid.toml")),
];

pub fn builtin_scenario_names() -> impl Iterator<Item = &'static str> {
    BUILTIN.iter().map(|(n, _)| *n)
}

pub fn builtin_scenario(name: &str) -> Result<SynthScenario> {
    let (_, text) = BUILTIN
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| SynthError::UnknownScenario(name.into()))?;
    SynthScenario::from_toml_str(text)
}

/// A built-in scenario name, or a path to a scenario file.
pub fn resolve_scenario(name_or_path: &str) -> Result<SynthScenario> {
    if builtin_scenario_names().any(|n| n == name_or_path) {
        builtin_scenario(name_or_path)
    } else if Path::new(name_or_path).is_file() {
        SynthScenario::load(Path::new(name_or_path))
    } else {
        Err(SynthError::UnknownScenario(name_or_path.into()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub scenario: SynthScenario,
    pub records: Vec<InferenceRecord>,
    /// Edges before glitch injection.
    pub clean_events: Vec<EdgeEvent>,
    pub capture: EdgeCapture,
    pub profile: Option<Vec<ProfileSample>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub scenario: String,
    pub seed: u64,
    pub platform: Option<String>,
    pub trials: usize,
    pub inferences_per_trial: usize,
    pub sample_rate_hz: u64,
    pub expected_pairs: usize,
    pub unfiltered_pairs: usize,
    pub glitch_edges: usize,
    /// `-(alpha * median(H) + (1 - beta) * median(L))`, ignoring per-trial
    /// offsets, quantization and faults.
    pub analytic_delta_ns: f64,
    pub expected: BTreeMap<String, serde_json::Value>,
    pub files: BTreeMap<String, String>,
}

pub fn generate_dataset(scenario: &SynthScenario) -> Result<SynthDataset> {
    let config = &scenario.config;
    config.validate()?;
    let mut records = Vec::new();
    let mut clean_events = Vec::new();
    let mut start = config.start_ns;
    for trial in 0..config.trials {
        let t = generate_trial(config, trial, start)?;
        records.extend(t.records);
        clean_events.extend(t.events);
        start = t.end_ns + config.inter_trial_gap_ns;
    }
    let events = inject_glitches(
        &clean_events,
        &config.glitches,
        sample_period_ns(config.sample_rate_hz),
        config.seed,
    )?;
    let capture = EdgeCapture::new(events, config.sample_rate_hz, scenario.name.clone())
        .map_err(|e| SynthError::Config(e.to_string()))?;
    let profile = scenario
        .profile
        .as_ref()
        .map(|p| generate_profile(p, config.seed))
        .transpose()?;
    Ok(SynthDataset {
        scenario: scenario.clone(),
        records,
        clean_events,
        capture,
        profile,
    })
}

impl SynthDataset {
    /// File name and contents, in write order; the manifest comes last.
    pub fn files(&self) -> Vec<(&'static str, String)> {
        let mut files = vec![
            (ORCHESTRATOR_FILE, format_orchestrator_log(&self.records)),
            (CAPTURE_FILE, format_native_capture(&self.capture)),
        ];
        if let Some(p) = &self.profile {
            files.push((PROFILE_FILE, format_profile_log(p)));
        }
        let manifest = self.manifest(&files);
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        files.push((MANIFEST_FILE, text));
        files
    }

    fn manifest(&self, files: &[(&'static str, String)]) -> DatasetManifest {
        let c = &self.scenario.config;
        let pulses = c.glitches
            .iter()
            .filter(|g| g.placement == GlitchPlacement::LowPeriodPulse)
            .map(|g| g.count)
            .sum::<usize>();
        DatasetManifest {
            scenario: self.scenario.name.clone(),
            seed: c.seed,
            platform: self.scenario.platform.clone(),
            trials: c.trials,
            inferences_per_trial: c.inferences_per_trial,
            sample_rate_hz: c.sample_rate_hz,
            expected_pairs: c.trials * c.inferences_per_trial,
            unfiltered_pairs: c.trials * c.inferences_per_trial + pulses,
            glitch_edges: self.capture.events.len() - self.clean_events.len(),
            analytic_delta_ns: -(c.rise_fraction * c.high_call.center_ns()
                + (1.0 - c.fall_fraction) * c.low_call.center_ns()),
            expected: self.scenario.expected.clone(),
            files: files
                .iter()
                .map(|(n, body)| (n.to_string(), content_digest([body.as_bytes()])))
                .collect(),
        }
    }

    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| SynthError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let mut written = Vec::new();
        for (name, body) in self.files() {
            let path = dir.join(name);
            fs::write(&path, body).map_err(io(&path))?;
            written.push(path);
        }
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{group_by_trial, parse_edge_capture_str, parse_profile_log_str, CaptureFormat, ParseOptions};
    use crate::pipeline::{pair_captures, run_pipeline, PipelineConfig};
    use crate::pulse::{glitch_filter, pair_events, Status};
    use crate::sensitivity::profile_summary;
    use proptest::prelude::*;

    fn run(config: &SynthConfig) -> (SynthDataset, crate::pipeline::PipelineRun) {
        let scenario = SynthScenario {
            name: "t".into(),
            description: String::new(),
            platform: None,
            config: config.clone(),
            profile: None,
            expected: BTreeMap::new(),
        };
        let ds = generate_dataset(&scenario).unwrap();
        let trials = group_by_trial(ds.records.clone());
        let run = run_pipeline(std::slice::from_ref(&ds.capture), &trials, &PipelineConfig::default()).unwrap();
        (ds, run)
    }

    #[test]
    fn analytic_edge_at_call_boundary() {
        let (_, r) = run(&SynthConfig::simple(2, 30, 1));
        assert!(r.series.iter().flat_map(|s| &s.deltas_ns).all(|&d| d == -18_000));
    }

    #[test]
    fn zero_overhead_limit() {
        let mut c = SynthConfig::simple(1, 50, 2);
        c.sample_rate_hz = 1_000_000_000;
        c.high_call = DurationModel::constant(0);
        c.low_call = DurationModel::constant(0);
        c.rise_fraction = 0.5;
        c.fall_fraction = 0.5;
        let (ds, r) = run(&c);
        assert!(ds.records.iter().all(|x| x.high_call_ns() == 1 && x.low_call_ns() == 1));
        assert!(r.series.iter().flat_map(|s| &s.deltas_ns).all(|&d| (-2..=0).contains(&d)));
    }

    #[test]
    fn containment_under_jitter() {
        let mut c = SynthConfig::simple(3, 100, 3);
        c.high_call = DurationModel::Laplace { median_ns: 10_000.0, scale_ns: 3_000.0, min_ns: None };
        c.low_call = DurationModel::LogNormal { median_ns: 8_000.0, sigma: 0.5 };
        c.rise_fraction = 0.7;
        c.fall_fraction = 0.3;
        c.fraction_jitter = 0.3;
        let (ds, r) = run(&c);
        let q = 10;
        for t in &r.aligned {
            for item in &t.items {
                let rec = &item.record;
                assert!(item.pulse.rise_ns + q > rec.t0_ns && item.pulse.fall_ns < rec.t3_ns + q);
                let delta = item.pulse.width_ns as i64 - rec.outer_ns() as i64;
                assert!(delta <= 0);
                assert!(delta.unsigned_abs() <= rec.high_call_ns() + rec.low_call_ns() + 2 * q);
            }
        }
        assert_eq!(ds.capture.events, ds.clean_events);
    }

    fn mixed_glitches() -> Vec<GlitchSpec> {
        use GlitchPlacement::*;
        [(LowPeriodPulse, 20), (LowPeriodPulse, 40), (SameDirectionEdge, 30), (SameDirectionEdge, 60)]
            .into_iter()
            .map(|(placement, dwell_ns)| GlitchSpec { placement, dwell_ns, count: 1 })
            .collect()
    }

    fn glitched(glitches: Vec<GlitchSpec>) -> SynthDataset {
        let mut c = SynthConfig::simple(10, 407, 4);
        c.glitches = glitches;
        generate_dataset(&SynthScenario {
            name: "g".into(),
            description: String::new(),
            platform: None,
            config: c,
            profile: None,
            expected: BTreeMap::new(),
        })
        .unwrap()
    }

    #[test]
    fn two_pulses_two_duplicates() {
        use GlitchPlacement::*;
        let ds = glitched(vec![
            GlitchSpec { placement: LowPeriodPulse, dwell_ns: 40, count: 2 },
            GlitchSpec { placement: SameDirectionEdge, dwell_ns: 40, count: 2 },
        ]);
        assert_eq!(ds.capture.len(), ds.clean_events.len() + 6);
        let cap = std::slice::from_ref(&ds.capture);
        let cfg = |f| PipelineConfig { filter_ns: f, ..PipelineConfig::default() };
        let (p0, _) = pair_captures(cap, 4070, &cfg(0));
        assert_eq!((p0.pair_count, p0.status), (4072, Status::Fail));
        assert!(!p0.violations.is_empty());
        let (p75, _) = pair_captures(cap, 4070, &cfg(75));
        assert_eq!((p75.pair_count, p75.status), (4070, Status::Pass));
        assert_eq!(glitch_filter(&ds.capture, 75).events, ds.clean_events);
    }

    #[test]
    fn sweep_rows_by_threshold() {
        let ds = glitched(mixed_glitches());
        let cap = std::slice::from_ref(&ds.capture);
        let row = |f| {
            let (p, _) = pair_captures(cap, 4070, &PipelineConfig { filter_ns: f, ..PipelineConfig::default() });
            (p.pair_count, p.status)
        };
        assert_eq!(row(0), (4072, Status::Fail));
        assert_eq!(row(25), (4071, Status::Fail));
        assert_eq!(row(50), (4070, Status::Fail));
        for f in [75, 100, 2000] {
            assert_eq!(row(f), (4070, Status::Pass));
        }
    }

    #[test]
    fn single_pulse_removed_above_its_dwell() {
        let ds = glitched(vec![GlitchSpec { placement: GlitchPlacement::LowPeriodPulse, dwell_ns: 40, count: 1 }]);
        assert_eq!(ds.capture.len(), ds.clean_events.len() + 2);
        assert_eq!(glitch_filter(&ds.capture, 40).events.len(), ds.capture.len());
        assert_eq!(glitch_filter(&ds.capture, 41).events, ds.clean_events);
    }

    #[test]
    fn glitch_errors() {
        let events = SynthConfig::simple(1, 3, 1);
        let t = generate_trial(&events, 0, 1_000_000).unwrap();
        assert_eq!(inject_glitches(&t.events, &[], 10, 1).unwrap(), t.events);
        let long = GlitchSpec { placement: GlitchPlacement::LowPeriodPulse, dwell_ns: 10_000_000, count: 1 };
        assert!(inject_glitches(&t.events, &[long], 10, 1).is_err());
        let many = GlitchSpec { placement: GlitchPlacement::LowPeriodPulse, dwell_ns: 20, count: 3 };
        assert!(inject_glitches(&t.events, &[many], 10, 1).is_err());
    }

    #[test]
    fn stuck_high_breaks_pairing() {
        let mut c = SynthConfig::simple(3, 20, 5);
        c.fault = Some(FaultSpec::StuckHigh { trial: 1, inference: 7 });
        let ds = generate_dataset(&SynthScenario {
            name: "s".into(),
            description: String::new(),
            platform: None,
            config: c,
            profile: None,
            expected: BTreeMap::new(),
        })
        .unwrap();
        assert_eq!(ds.capture.len(), 2 * 60 - 2 * 12);
        let trials = group_by_trial(ds.records.clone());
        let err = run_pipeline(&[ds.capture], &trials, &PipelineConfig::default()).unwrap_err();
        assert!(err.is_alignment_failure());
    }

    #[test]
    fn delta_offset_shifts_residuals() {
        let mut c = SynthConfig::simple(2, 20, 6);
        c.fault = Some(FaultSpec::DeltaOffset { offset_ns: -414_000 });
        let (_, r) = run(&c);
        assert!(r.series.iter().flat_map(|s| &s.deltas_ns).all(|&d| d == -432_000));
    }

    #[test]
    fn profile_matches_constant_inputs() {
        let p = ProfileConfig {
            samples: 100,
            warmup: 20,
            high: DurationModel::constant(9_830),
            low: DurationModel::constant(8_060),
        };
        let s = profile_summary(&generate_profile(&p, 1).unwrap(), 20).unwrap();
        assert_eq!((s.med_high_ns, s.med_low_ns, s.med_sum_ns), (9_830.0, 8_060.0, 17_890.0));
        let p = ProfileConfig { high: DurationModel::constant(51_690), low: DurationModel::constant(50_670), ..p };
        let s = profile_summary(&generate_profile(&p, 1).unwrap(), 20).unwrap();
        // constant inputs cannot give 102.37; the sum is exact
        assert_eq!(s.med_sum_ns, 102_360.0);
        let p = ProfileConfig { samples: 21, ..p };
        assert!(profile_summary(&generate_profile(&p, 1).unwrap(), 20).is_err());
    }

    #[test]
    fn discrete_center() {
        let d = DurationModel::Discrete {
            points: vec![
                WeightedValue { value_ns: 51_700, weight: 0.45 },
                WeightedValue { value_ns: 51_680, weight: 0.1 },
                WeightedValue { value_ns: 51_690, weight: 0.45 },
            ],
        };
        assert_eq!(d.center_ns(), 51_690.0);
    }

    #[test]
    fn config_validation() {
        let mut c = SynthConfig::simple(2, 2, 1);
        c.rise_fraction = 1.5;
        assert!(c.validate().is_err());
        let mut c = SynthConfig::simple(2, 2, 1);
        c.trial_variation = vec![TrialVariation::default()];
        assert!(c.validate().is_err());
        let mut c = SynthConfig::simple(0, 2, 1);
        assert!(c.validate().is_err());
        c.trials = 1;
        c.high_call = DurationModel::Uniform { median_ns: 10.0, half_width_ns: 20.0, min_ns: None };
        assert!(c.validate().is_err());
    }

    #[test]
    fn builtin_scenarios_parse() {
        for name in builtin_scenario_names() {
            let s = builtin_scenario(name).unwrap();
            assert_eq!(s.name, name);
        }
        assert!(builtin_scenario("nope").is_err());
    }

    #[test]
    fn emitted_files_round_trip() {
        let mut s = builtin_scenario("jetson-calibrated").unwrap();
        s.config.trials = 2;
        s.config.trial_variation.truncate(2);
        s.profile.as_mut().unwrap().samples = 50;
        let ds = generate_dataset(&s).unwrap();
        let files: BTreeMap<_, _> = ds.files().into_iter().collect();
        let parsed = parse_edge_capture_str(
            &files[CAPTURE_FILE],
            CaptureFormat::NativeNs,
            &ParseOptions::default(),
        )
        .unwrap();
        assert_eq!(parsed.capture.events, ds.capture.events);
        let recs = crate::ingest::parse_orchestrator_log_str(&files[ORCHESTRATOR_FILE]).unwrap();
        assert_eq!(recs, ds.records);
        let prof = parse_profile_log_str(&files[PROFILE_FILE]).unwrap();
        assert_eq!(Some(prof), ds.profile);
    }

    #[test]
    fn write_is_byte_deterministic() {
        let mut s = builtin_scenario("pi-calibrated").unwrap();
        s.config.trials = 2;
        s.config.trial_variation.truncate(2);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate_dataset(&s).unwrap().write_to(a.path()).unwrap();
        generate_dataset(&s).unwrap().write_to(b.path()).unwrap();
        for name in [ORCHESTRATOR_FILE, CAPTURE_FILE, PROFILE_FILE, MANIFEST_FILE] {
            assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn same_seed_same_dataset(seed in any::<u64>()) {
            let mut c = SynthConfig::simple(2, 20, seed);
            c.high_call = DurationModel::Laplace { median_ns: 10_000.0, scale_ns: 2_000.0, min_ns: Some(1_000.0) };
            c.glitches = mixed_glitches();
            let s = SynthScenario { name: "p".into(), description: String::new(), platform: None, config: c, profile: None, expected: BTreeMap::new() };
            let a = generate_dataset(&s).unwrap().files();
            let b = generate_dataset(&s).unwrap().files();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn glitches_never_touch_real_pairs(seed in any::<u64>(), n in 1usize..6) {
            let t = generate_trial(&SynthConfig::simple(1, 30, seed), 0, 1_000_000).unwrap();
            let g = [GlitchSpec { placement: GlitchPlacement::LowPeriodPulse, dwell_ns: 30, count: n }];
            let out = inject_glitches(&t.events, &g, 10, seed).unwrap();
            prop_assert_eq!(pair_events(&out, None).pair_count, 30 + n);
            prop_assert_eq!(glitch_filter(&EdgeCapture::new(out, DEFAULT_SAMPLE_RATE_HZ, "x").unwrap(), 31).events, t.events);
        }
    }
}
