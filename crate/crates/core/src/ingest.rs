//! Readers and writers for edge captures, orchestrator timestamp logs and
//! direct GPIO profile logs.
//!
//! Everything is held as integer nanoseconds. Two capture layouts are
//! understood:
//!
//! * native: `timestamp_ns,direction` with `R`/`F` directions, optionally
//!   preceded by `# key=value` metadata lines (`sample_rate_hz`, `source_id`);
//! * analyzer: `time_s,level` rows as exported by a logic analyzer, decimal
//!   seconds plus a `0`/`1` level column.
//!
//! Orchestrator and profile logs are JSON lines.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default logic-analyzer sample rate (100 MHz).
pub const DEFAULT_SAMPLE_RATE_HZ: u64 = 100_000_000;

const NATIVE_HEADER: &str = "timestamp_ns,direction";
const ANALYZER_HEADER: &str = "time_s,level";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: timestamp {timestamp_ns} ns does not follow the previous event at {previous_ns} ns")]
    NonMonotonic {
        line: usize,
        timestamp_ns: u64,
        previous_ns: u64,
    },
    #[error("line {line}: trial {trial_id} index {index} violates {violated}")]
    Ordering {
        line: usize,
        trial_id: String,
        index: u32,
        violated: &'static str,
    },
    #[error("line {line}: duplicate record for trial {trial_id} index {index}")]
    DuplicateRecord {
        line: usize,
        trial_id: String,
        index: u32,
    },
    #[error("line {line}: duplicate profile iteration {iteration}")]
    DuplicateIteration { line: usize, iteration: u32 },
    #[error("line {line}: {field} must be positive")]
    NonPositiveDuration { line: usize, field: &'static str },
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T, E = IngestError> = std::result::Result<T, E>;

/// Non-fatal findings reported alongside a parsed capture.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum IngestWarning {
    /// The timestamp is not a multiple of the declared sample period.
    OffGrid {
        line: usize,
        timestamp_ns: u64,
        period_ns: u64,
    },
}

impl fmt::Display for IngestWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IngestWarning::OffGrid {
                line,
                timestamp_ns,
                period_ns,
            } => write!(
                f,
                "line {line}: {timestamp_ns} ns is off the {period_ns} ns sample grid"
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Rising,
    Falling,
}

impl Direction {
    pub fn symbol(self) -> char {
        match self {
            Direction::Rising => 'R',
            Direction::Falling => 'F',
        }
    }

    pub fn opposite(self) -> Direction {
        match self {
            Direction::Rising => Direction::Falling,
            Direction::Falling => Direction::Rising,
        }
    }

    /// Line level after this transition.
    pub fn level(self) -> bool {
        self == Direction::Rising
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EdgeEvent {
    pub timestamp_ns: u64,
    pub direction: Direction,
}

impl EdgeEvent {
    pub fn rising(timestamp_ns: u64) -> Self {
        EdgeEvent {
            timestamp_ns,
            direction: Direction::Rising,
        }
    }

    pub fn falling(timestamp_ns: u64) -> Self {
        EdgeEvent {
            timestamp_ns,
            direction: Direction::Falling,
        }
    }
}

/// Time-ordered wire transitions from one logic-analyzer channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeCapture {
    pub events: Vec<EdgeEvent>,
    pub sample_rate_hz: u64,
    pub source_id: String,
}

impl EdgeCapture {
    /// Builds a capture, checking that timestamps strictly increase.
    pub fn new(
        events: Vec<EdgeEvent>,
        sample_rate_hz: u64,
        source_id: impl Into<String>,
    ) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(IngestError::Invalid("sample rate must be positive".into()));
        }
        if let Some(w) = events
            .windows(2)
            .find(|w| w[1].timestamp_ns <= w[0].timestamp_ns)
        {
            return Err(IngestError::Invalid(format!(
                "events not strictly increasing: {} ns then {} ns",
                w[0].timestamp_ns, w[1].timestamp_ns
            )));
        }
        Ok(EdgeCapture {
            events,
            sample_rate_hz,
            source_id: source_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Sample period in ns, `round(1e9 / sample_rate_hz)`.
    pub fn sample_period_ns(&self) -> u64 {
        sample_period_ns(self.sample_rate_hz)
    }

    /// True when consecutive events alternate direction. A capture that does
    /// not alternate is still valid; pairing reports where it breaks.
    pub fn is_alternating(&self) -> bool {
        self.events
            .windows(2)
            .all(|w| w[0].direction != w[1].direction)
    }

    pub fn with_events(&self, events: Vec<EdgeEvent>) -> EdgeCapture {
        EdgeCapture {
            events,
            sample_rate_hz: self.sample_rate_hz,
            source_id: self.source_id.clone(),
        }
    }
}

pub fn sample_period_ns(sample_rate_hz: u64) -> u64 {
    // round-half-up of 1e9 / R in integers
    ((2_000_000_000u128 + sample_rate_hz as u128) / (2 * sample_rate_hz as u128)) as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum CaptureFormat {
    /// `timestamp_ns,direction`
    NativeNs,
    /// `time_s,level`
    AnalyzerSeconds,
}

#[derive(Debug, Clone)]
pub struct ParseOptions {
    /// Used when the file does not declare its own rate.
    pub sample_rate_hz: u64,
    pub source_id: Option<String>,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions {
            sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
            source_id: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParsedCapture {
    pub capture: EdgeCapture,
    pub warnings: Vec<IngestWarning>,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn parse_edge_capture(
    path: &Path,
    format: CaptureFormat,
    opts: &ParseOptions,
) -> Result<ParsedCapture> {
    let text = read_text(path)?;
    let mut opts = opts.clone();
    if opts.source_id.is_none() {
        opts.source_id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned());
    }
    parse_edge_capture_str(&text, format, &opts)
}

pub fn parse_edge_capture_str(
    text: &str,
    format: CaptureFormat,
    opts: &ParseOptions,
) -> Result<ParsedCapture> {
    match format {
        CaptureFormat::NativeNs => parse_native(text, opts),
        CaptureFormat::AnalyzerSeconds => parse_analyzer(text, opts),
    }
}

fn parse_native(text: &str, opts: &ParseOptions) -> Result<ParsedCapture> {
    let mut sample_rate_hz = opts.sample_rate_hz;
    let mut source_id = opts.source_id.clone().unwrap_or_default();
    let mut saw_header = false;
    let mut rows: Vec<(usize, EdgeEvent)> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(meta) = trimmed.strip_prefix('#') {
            if let Some((key, value)) = meta.split_once('=') {
                match key.trim() {
                    "sample_rate_hz" => {
                        sample_rate_hz = value.trim().parse().map_err(|_| IngestError::Parse {
                            line,
                            message: format!("bad sample_rate_hz {:?}", value.trim()),
                        })?;
                    }
                    "source_id" => source_id = value.trim().to_string(),
                    _ => {}
                }
            }
            continue;
        }
        if !saw_header {
            if trimmed != NATIVE_HEADER {
                return Err(IngestError::Parse {
                    line,
                    message: format!("expected header {NATIVE_HEADER:?}, found {trimmed:?}"),
                });
            }
            saw_header = true;
            continue;
        }
        let (ts, dir) = trimmed.split_once(',').ok_or_else(|| IngestError::Parse {
            line,
            message: format!("expected two columns, found {trimmed:?}"),
        })?;
        let timestamp_ns: u64 = ts.trim().parse().map_err(|_| IngestError::Parse {
            line,
            message: format!("bad timestamp {:?}", ts.trim()),
        })?;
        let direction = match dir.trim() {
            "R" | "r" | "rising" => Direction::Rising,
            "F" | "f" | "falling" => Direction::Falling,
            other => {
                return Err(IngestError::Parse {
                    line,
                    message: format!("bad direction {other:?}"),
                })
            }
        };
        if let Some((_, prev)) = rows.last() {
            if timestamp_ns <= prev.timestamp_ns {
                return Err(IngestError::NonMonotonic {
                    line,
                    timestamp_ns,
                    previous_ns: prev.timestamp_ns,
                });
            }
        }
        rows.push((
            line,
            EdgeEvent {
                timestamp_ns,
                direction,
            },
        ));
    }
    if !saw_header {
        return Err(IngestError::Parse {
            line: 1,
            message: format!("missing header {NATIVE_HEADER:?}"),
        });
    }
    finish_capture(rows, sample_rate_hz, source_id)
}

fn finish_capture(
    rows: Vec<(usize, EdgeEvent)>,
    sample_rate_hz: u64,
    source_id: String,
) -> Result<ParsedCapture> {
    if sample_rate_hz == 0 {
        return Err(IngestError::Invalid("sample rate must be positive".into()));
    }
    let period_ns = sample_period_ns(sample_rate_hz);
    let warnings = rows
        .iter()
        .filter(|(_, e)| e.timestamp_ns % period_ns != 0)
        .map(|&(line, e)| IngestWarning::OffGrid {
            line,
            timestamp_ns: e.timestamp_ns,
            period_ns,
        })
        .collect();
    let events = rows.into_iter().map(|(_, e)| e).collect();
    Ok(ParsedCapture {
        capture: EdgeCapture::new(events, sample_rate_hz, source_id)?,
        warnings,
    })
}

fn parse_analyzer(text: &str, opts: &ParseOptions) -> Result<ParsedCapture> {
    let mut rows: Vec<(usize, EdgeEvent)> = Vec::new();
    let mut level: Option<bool> = None;
    let mut last_time: Option<SecondsValue> = None;
    let mut saw_header = false;

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (time_col, level_col) = trimmed.split_once(',').ok_or_else(|| IngestError::Parse {
            line,
            message: format!("expected two columns, found {trimmed:?}"),
        })?;
        if !saw_header {
            saw_header = true;
            // Exporters name the columns differently; any non-numeric first
            // row is taken as the header.
            if trimmed == ANALYZER_HEADER || time_col.trim().parse::<f64>().is_err() {
                continue;
            }
        }
        let time = SecondsValue::parse(time_col.trim()).map_err(|message| IngestError::Parse {
            line,
            message,
        })?;
        if let Some(prev) = last_time {
            if time <= prev {
                return Err(IngestError::NonMonotonic {
                    line,
                    timestamp_ns: time.to_ns(),
                    previous_ns: prev.to_ns(),
                });
            }
        }
        last_time = Some(time);
        let row_level = match level_col.trim() {
            "1" => true,
            "0" => false,
            other => {
                return Err(IngestError::Parse {
                    line,
                    message: format!("bad level {other:?}"),
                })
            }
        };
        if level == Some(row_level) {
            continue;
        }
        level = Some(row_level);
        let timestamp_ns = time.to_ns();
        if rows.last().is_some_and(|(_, e)| e.timestamp_ns == timestamp_ns) {
            // Two transitions rounding onto the same nanosecond cancel out.
            rows.pop();
            continue;
        }
        let direction = if row_level {
            Direction::Rising
        } else {
            Direction::Falling
        };
        rows.push((
            line,
            EdgeEvent {
                timestamp_ns,
                direction,
            },
        ));
    }
    if !saw_header {
        return Err(IngestError::Parse {
            line: 1,
            message: "missing header".into(),
        });
    }
    let source_id = opts.source_id.clone().unwrap_or_default();
    finish_capture(rows, opts.sample_rate_hz, source_id)
}

/// A non-negative decimal number of seconds held exactly in attoseconds.
/// `inexact` marks digits below the attosecond that were dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct SecondsValue {
    attos: u128,
    inexact: bool,
}

impl SecondsValue {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        let bad = || format!("bad time value {s:?}");
        let s = s.strip_prefix('+').unwrap_or(s);
        if s.starts_with('-') {
            return Err(format!("negative time value {s:?}"));
        }
        let (mantissa, exponent) = match s.find(['e', 'E']) {
            Some(pos) => {
                let exp: i32 = s[pos + 1..].parse().map_err(|_| bad())?;
                (&s[..pos], exp)
            }
            None => (s, 0),
        };
        let (int_part, frac_part) = mantissa.split_once('.').unwrap_or((mantissa, ""));
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(bad());
        }
        if !int_part.bytes().chain(frac_part.bytes()).all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let mut digits: Vec<u8> = int_part
            .bytes()
            .chain(frac_part.bytes())
            .map(|b| b - b'0')
            .collect();
        // value = digits * 10^(scale) seconds; convert to attoseconds.
        let mut scale: i64 = exponent as i64 - frac_part.len() as i64 + 18;
        let first_nonzero = digits.iter().position(|&d| d != 0).unwrap_or(digits.len());
        digits.drain(..first_nonzero);
        let mut inexact = false;
        while digits.len() > 36 {
            inexact |= digits.pop() != Some(0);
            scale += 1;
        }
        let mut attos: u128 = 0;
        if scale < 0 {
            let drop = (-scale) as usize;
            if drop >= digits.len() {
                inexact |= digits.iter().any(|&d| d != 0);
                digits.clear();
            } else {
                let tail = digits.split_off(digits.len() - drop);
                inexact |= tail.iter().any(|&d| d != 0);
            }
            scale = 0;
        }
        for d in &digits {
            attos = attos
                .checked_mul(10)
                .and_then(|v| v.checked_add(*d as u128))
                .ok_or_else(bad)?;
        }
        for _ in 0..scale {
            attos = attos.checked_mul(10).ok_or_else(bad)?;
        }
        Ok(SecondsValue { attos, inexact })
    }

    /// Nanoseconds, rounding half to even.
    fn to_ns(self) -> u64 {
        const ATTOS_PER_NS: u128 = 1_000_000_000;
        let q = self.attos / ATTOS_PER_NS;
        let r = self.attos % ATTOS_PER_NS;
        let half = ATTOS_PER_NS / 2;
        let up = r > half || (r == half && (self.inexact || q % 2 == 1));
        (q + up as u128) as u64
    }
}

/// Writes the native layout. Parsing the output yields an identical capture.
pub fn format_native_capture(capture: &EdgeCapture) -> String {
    let mut out = String::with_capacity(32 + capture.events.len() * 14);
    out.push_str(&format!("# sample_rate_hz={}\n", capture.sample_rate_hz));
    if !capture.source_id.is_empty() {
        out.push_str(&format!("# source_id={}\n", capture.source_id));
    }
    out.push_str(NATIVE_HEADER);
    out.push('\n');
    for e in &capture.events {
        out.push_str(&format!("{},{}\n", e.timestamp_ns, e.direction.symbol()));
    }
    out
}

/// Writes the analyzer `time_s,level` layout, one row per transition.
pub fn format_analyzer_capture(capture: &EdgeCapture) -> String {
    let mut out = String::from(ANALYZER_HEADER);
    out.push('\n');
    for e in &capture.events {
        out.push_str(&format!(
            "{}.{:09},{}\n",
            e.timestamp_ns / 1_000_000_000,
            e.timestamp_ns % 1_000_000_000,
            u8::from(e.direction.level())
        ));
    }
    out
}

/// The four software-clock timestamps bracketing one inference.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InferenceRecord {
    pub trial_id: String,
    pub index: u32,
    pub t0_ns: u64,
    pub t1_ns: u64,
    pub t2_ns: u64,
    pub t3_ns: u64,
}

impl InferenceRecord {
    /// `t3 - t0`: both GPIO calls plus the inference.
    pub fn outer_ns(&self) -> u64 {
        self.t3_ns - self.t0_ns
    }

    /// `t2 - t1`: the inference call alone.
    pub fn inner_ns(&self) -> u64 {
        self.t2_ns - self.t1_ns
    }

    pub fn high_call_ns(&self) -> u64 {
        self.t1_ns - self.t0_ns
    }

    pub fn low_call_ns(&self) -> u64 {
        self.t3_ns - self.t2_ns
    }

    fn check_ordering(&self) -> std::result::Result<(), &'static str> {
        if self.t1_ns <= self.t0_ns {
            Err("t0 < t1")
        } else if self.t2_ns < self.t1_ns {
            Err("t1 <= t2")
        } else if self.t3_ns <= self.t2_ns {
            Err("t2 < t3")
        } else {
            Ok(())
        }
    }
}

/// Records of one trial, ordered by index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialRecords {
    pub trial_id: String,
    pub records: Vec<InferenceRecord>,
}

pub fn parse_orchestrator_log(path: &Path) -> Result<Vec<InferenceRecord>> {
    parse_orchestrator_log_str(&read_text(path)?)
}

/// Parses JSON-lines records and returns them grouped by trial (trials in
/// order of their first `t0`) and ordered by index within each trial.
pub fn parse_orchestrator_log_str(text: &str) -> Result<Vec<InferenceRecord>> {
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        let rec: InferenceRecord =
            serde_json::from_str(trimmed).map_err(|e| IngestError::Parse {
                line,
                message: e.to_string(),
            })?;
        if let Err(violated) = rec.check_ordering() {
            return Err(IngestError::Ordering {
                line,
                trial_id: rec.trial_id,
                index: rec.index,
                violated,
            });
        }
        if !seen.insert((rec.trial_id.clone(), rec.index)) {
            return Err(IngestError::DuplicateRecord {
                line,
                trial_id: rec.trial_id,
                index: rec.index,
            });
        }
        records.push(rec);
    }
    Ok(group_by_trial(records)
        .into_iter()
        .flat_map(|t| t.records)
        .collect())
}

pub fn group_by_trial(records: Vec<InferenceRecord>) -> Vec<TrialRecords> {
    let mut trials: Vec<TrialRecords> = Vec::new();
    for rec in records {
        match trials.iter_mut().find(|t| t.trial_id == rec.trial_id) {
            Some(t) => t.records.push(rec),
            None => trials.push(TrialRecords {
                trial_id: rec.trial_id.clone(),
                records: vec![rec],
            }),
        }
    }
    for t in &mut trials {
        t.records.sort_by_key(|r| r.index);
    }
    trials.sort_by(|a, b| {
        let first = |t: &TrialRecords| t.records.iter().map(|r| r.t0_ns).min();
        first(a)
            .cmp(&first(b))
            .then_with(|| a.trial_id.cmp(&b.trial_id))
    });
    trials
}

pub fn format_orchestrator_log(records: &[InferenceRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// One iteration of the direct GPIO call-duration harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileSample {
    pub iteration: u32,
    pub high_ns: u64,
    pub low_ns: u64,
}

pub fn parse_profile_log(path: &Path) -> Result<Vec<ProfileSample>> {
    parse_profile_log_str(&read_text(path)?)
}

pub fn parse_profile_log_str(text: &str) -> Result<Vec<ProfileSample>> {
    let mut seen = HashSet::new();
    let mut samples = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        let s: ProfileSample = serde_json::from_str(trimmed).map_err(|e| IngestError::Parse {
            line,
            message: e.to_string(),
        })?;
        if s.high_ns == 0 {
            return Err(IngestError::NonPositiveDuration {
                line,
                field: "high_ns",
            });
        }
        if s.low_ns == 0 {
            return Err(IngestError::NonPositiveDuration {
                line,
                field: "low_ns",
            });
        }
        if !seen.insert(s.iteration) {
            return Err(IngestError::DuplicateIteration {
                line,
                iteration: s.iteration,
            });
        }
        samples.push(s);
    }
    samples.sort_by_key(|s| s.iteration);
    Ok(samples)
}

pub fn format_profile_log(samples: &[ProfileSample]) -> String {
    let mut out = String::new();
    for s in samples {
        out.push_str(&serde_json::to_string(s).expect("sample serializes"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Platform {
    Jetson,
    Pi,
    Other(String),
}

impl Platform {
    pub fn name(&self) -> &str {
        match self {
            Platform::Jetson => "jetson",
            Platform::Pi => "pi",
            Platform::Other(name) => name,
        }
    }
}

impl fmt::Display for Platform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Platform {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s.to_ascii_lowercase().as_str() {
            "" => Err(IngestError::Invalid("platform must be nonempty".into())),
            "jetson" => Ok(Platform::Jetson),
            "pi" => Ok(Platform::Pi),
            _ => Ok(Platform::Other(s.to_string())),
        }
    }
}

impl Serialize for Platform {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Platform {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Operating state and provenance a calibration is valid for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatingStateTag {
    pub platform: Platform,
    pub state_label: String,
    pub session_id: String,
    pub captured_at: String,
}

impl OperatingStateTag {
    pub fn new(
        platform: Platform,
        state_label: impl Into<String>,
        session_id: impl Into<String>,
        captured_at: impl Into<String>,
    ) -> Result<Self> {
        let session_id = session_id.into();
        if session_id.trim().is_empty() {
            return Err(IngestError::Invalid("session_id must be nonempty".into()));
        }
        if platform.name().is_empty() {
            return Err(IngestError::Invalid("platform must be nonempty".into()));
        }
        Ok(OperatingStateTag {
            platform,
            state_label: state_label.into(),
            session_id,
            captured_at: captured_at.into(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn analyzer(text: &str) -> Result<ParsedCapture> {
        parse_edge_capture_str(text, CaptureFormat::AnalyzerSeconds, &ParseOptions::default())
    }

    fn native(text: &str) -> Result<ParsedCapture> {
        parse_edge_capture_str(text, CaptureFormat::NativeNs, &ParseOptions::default())
    }

    #[test]
    fn analyzer_rows_convert_to_ns() {
        let parsed = analyzer("time_s,level\n0.000000250,1\n0.001200250,0\n").unwrap();
        assert_eq!(
            parsed.capture.events,
            vec![EdgeEvent::rising(250), EdgeEvent::falling(1_200_250)]
        );
        assert!(parsed.warnings.is_empty());
    }

    #[test]
    fn empty_files_with_header_have_no_events() {
        assert!(analyzer("time_s,level\n").unwrap().capture.is_empty());
        assert!(native("timestamp_ns,direction\n").unwrap().capture.is_empty());
    }

    #[test]
    fn missing_native_header_is_an_error() {
        assert!(matches!(native(""), Err(IngestError::Parse { .. })));
        assert!(matches!(native("10,R\n"), Err(IngestError::Parse { .. })));
    }

    #[test]
    fn equal_levels_collapse() {
        let parsed = analyzer(
            "Time [s],Channel 0\n0.0,0\n0.000001,0\n0.000002,1\n0.000003,1\n0.000004,0\n",
        )
        .unwrap();
        assert_eq!(
            parsed.capture.events,
            vec![
                EdgeEvent::falling(0),
                EdgeEvent::rising(2000),
                EdgeEvent::falling(4000)
            ]
        );
    }

    #[test]
    fn half_ns_rounds_to_even() {
        let parsed = analyzer("time_s,level\n0.0000000025,1\n0.0000000035,0\n1e-8,1\n").unwrap();
        let ts: Vec<u64> = parsed.capture.events.iter().map(|e| e.timestamp_ns).collect();
        assert_eq!(ts, vec![2, 4, 10]);
    }

    #[test]
    fn transitions_rounding_together_cancel() {
        let parsed =
            analyzer("time_s,level\n0.000001,1\n0.0000020001,0\n0.0000020002,1\n0.000005,0\n")
                .unwrap();
        assert_eq!(
            parsed.capture.events,
            vec![EdgeEvent::rising(1000), EdgeEvent::falling(5000)]
        );
    }

    #[test]
    fn analyzer_rejects_backwards_time() {
        let err = analyzer("time_s,level\n0.002,1\n0.001,0\n").unwrap_err();
        assert!(matches!(err, IngestError::NonMonotonic { line: 3, .. }));
        assert!(analyzer("time_s,level\n0.002,1\n0.002,0\n").is_err());
        assert!(analyzer("time_s,level\n-0.1,1\n").is_err());
        assert!(analyzer("time_s,level\nabc,1\n0.1,x\n").is_err());
    }

    #[test]
    fn off_grid_timestamps_warn() {
        let parsed = native("timestamp_ns,direction\n250,R\n1203,F\n").unwrap();
        assert_eq!(parsed.capture.len(), 2);
        assert_eq!(
            parsed.warnings,
            vec![IngestWarning::OffGrid {
                line: 3,
                timestamp_ns: 1203,
                period_ns: 10
            }]
        );
    }

    #[test]
    fn native_metadata_overrides_defaults() {
        let parsed =
            native("# sample_rate_hz=50000000\n# source_id=bench\ntimestamp_ns,direction\n20,R\n")
                .unwrap();
        assert_eq!(parsed.capture.sample_rate_hz, 50_000_000);
        assert_eq!(parsed.capture.sample_period_ns(), 20);
        assert_eq!(parsed.capture.source_id, "bench");
    }

    #[test]
    fn native_rejects_non_monotonic() {
        let err = native("timestamp_ns,direction\n20,R\n20,F\n").unwrap_err();
        assert!(matches!(err, IngestError::NonMonotonic { line: 3, .. }));
    }

    #[test]
    fn non_alternating_capture_is_flagged_not_rejected() {
        let parsed = native("timestamp_ns,direction\n0,R\n500,R\n1000,F\n").unwrap();
        assert!(!parsed.capture.is_alternating());
    }

    #[test]
    fn orchestrator_record_outer_interval() {
        let recs = parse_orchestrator_log_str(
            r#"{"trial_id":"T1","index":0,"t0_ns":0,"t1_ns":10000,"t2_ns":1210000,"t3_ns":1218000}"#,
        )
        .unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].outer_ns(), 1_218_000);
        assert_eq!(recs[0].inner_ns(), 1_200_000);
    }

    #[test]
    fn orchestrator_rejects_bad_ordering_with_line() {
        let text = concat!(
            r#"{"trial_id":"T1","index":0,"t0_ns":0,"t1_ns":10,"t2_ns":20,"t3_ns":30}"#,
            "\n",
            r#"{"trial_id":"T1","index":1,"t0_ns":40,"t1_ns":60,"t2_ns":50,"t3_ns":70}"#,
            "\n"
        );
        match parse_orchestrator_log_str(text) {
            Err(IngestError::Ordering { line, violated, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(violated, "t1 <= t2");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn orchestrator_allows_t1_equal_t2() {
        let text = r#"{"trial_id":"T1","index":0,"t0_ns":0,"t1_ns":10,"t2_ns":10,"t3_ns":30}"#;
        assert!(parse_orchestrator_log_str(text).is_ok());
    }

    #[test]
    fn orchestrator_rejects_duplicates() {
        let line = r#"{"trial_id":"T1","index":0,"t0_ns":0,"t1_ns":10,"t2_ns":20,"t3_ns":30}"#;
        let err = parse_orchestrator_log_str(&format!("{line}\n{line}\n")).unwrap_err();
        assert!(matches!(err, IngestError::DuplicateRecord { line: 2, .. }));
    }

    #[test]
    fn orchestrator_407_line_trial() {
        let recs: Vec<InferenceRecord> = (0..407u32)
            .map(|i| {
                let t0 = i as u64 * 2_000_000;
                InferenceRecord {
                    trial_id: "T1".into(),
                    index: i,
                    t0_ns: t0,
                    t1_ns: t0 + 10_000,
                    t2_ns: t0 + 1_210_000,
                    t3_ns: t0 + 1_218_000,
                }
            })
            .rev()
            .collect();
        let parsed = parse_orchestrator_log_str(&format_orchestrator_log(&recs)).unwrap();
        assert_eq!(parsed.len(), 407);
        assert!(parsed.iter().map(|r| r.index).eq(0..407));
    }

    #[test]
    fn trials_grouped_in_time_order() {
        let rec = |trial: &str, index: u32, t0: u64| InferenceRecord {
            trial_id: trial.into(),
            index,
            t0_ns: t0,
            t1_ns: t0 + 1,
            t2_ns: t0 + 2,
            t3_ns: t0 + 3,
        };
        let grouped = group_by_trial(vec![
            rec("B", 1, 510),
            rec("A", 0, 100),
            rec("B", 0, 500),
            rec("A", 1, 110),
        ]);
        assert_eq!(grouped[0].trial_id, "A");
        assert_eq!(grouped[1].trial_id, "B");
        assert_eq!(grouped[1].records[0].index, 0);
    }

    #[test]
    fn profile_log_rejects_zero_duration() {
        let err = parse_profile_log_str(r#"{"iteration":0,"high_ns":0,"low_ns":8000}"#).unwrap_err();
        assert!(matches!(
            err,
            IngestError::NonPositiveDuration {
                field: "high_ns",
                ..
            }
        ));
    }

    #[test]
    fn profile_log_5000_samples() {
        let samples: Vec<ProfileSample> = (0..5000)
            .map(|i| ProfileSample {
                iteration: i,
                high_ns: 9830,
                low_ns: 8060,
            })
            .collect();
        let parsed = parse_profile_log_str(&format_profile_log(&samples)).unwrap();
        assert_eq!(parsed, samples);
    }

    #[test]
    fn platform_round_trips_through_strings() {
        for name in ["jetson", "pi", "orin-nx"] {
            let p: Platform = name.parse().unwrap();
            assert_eq!(p.to_string(), name);
        }
        assert!("".parse::<Platform>().is_err());
        assert!(OperatingStateTag::new(Platform::Pi, "calibrated-C0", "", "").is_err());
    }

    fn arb_events() -> impl Strategy<Value = Vec<EdgeEvent>> {
        prop::collection::vec((1u64..5_000, any::<bool>()), 0..60).prop_map(|steps| {
            let mut t = 0;
            steps
                .into_iter()
                .map(|(dt, rising)| {
                    t += dt;
                    EdgeEvent {
                        timestamp_ns: t,
                        direction: if rising {
                            Direction::Rising
                        } else {
                            Direction::Falling
                        },
                    }
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn native_round_trip(events in arb_events()) {
            let cap = EdgeCapture::new(events, DEFAULT_SAMPLE_RATE_HZ, "rt").unwrap();
            let parsed = native(&format_native_capture(&cap)).unwrap();
            prop_assert_eq!(parsed.capture, cap);
        }

        #[test]
        fn analyzer_round_trip_for_alternating(start in any::<bool>(), gaps in prop::collection::vec(1u64..10_000_000_000, 0..40)) {
            let mut dir = if start { Direction::Rising } else { Direction::Falling };
            let mut t = 0;
            let mut events = Vec::new();
            for g in gaps {
                t += g;
                events.push(EdgeEvent { timestamp_ns: t, direction: dir });
                dir = dir.opposite();
            }
            let cap = EdgeCapture::new(events, DEFAULT_SAMPLE_RATE_HZ, "").unwrap();
            let parsed = analyzer(&format_analyzer_capture(&cap)).unwrap();
            prop_assert_eq!(parsed.capture.events, cap.events);
        }

        #[test]
        fn analyzer_output_strictly_increasing(rows in prop::collection::vec((1u64..3, any::<bool>()), 0..80)) {
            // Sub-ns spacing forces rounding collisions.
            let mut t = 0u64;
            let mut text = String::from("time_s,level\n");
            for (dt, lvl) in rows {
                t += dt;
                text.push_str(&format!("0.{:012},{}\n", t * 400, u8::from(lvl)));
            }
            let parsed = analyzer(&text).unwrap();
            prop_assert!(parsed.capture.events.windows(2).all(|w| w[0].timestamp_ns < w[1].timestamp_ns));
            prop_assert!(parsed.capture.is_alternating());
        }
    }
}
