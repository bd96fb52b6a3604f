//! `gpiocal` command line: calibrate, validate, sweep, profile-compare,
//! drift and synth.
//!
//! Exit codes: 0 accept, 1 gate reject, 2 alignment FAIL, 3 input or
//! configuration error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::gate::{evaluate_gate, GateConfig, GateMode, GateStatistic};
use crate::ingest::{
    group_by_trial, parse_edge_capture_str, parse_orchestrator_log_str, parse_profile_log_str,
    CaptureFormat, EdgeCapture, OperatingStateTag, ParseOptions, Platform, TrialRecords,
    DEFAULT_SAMPLE_RATE_HZ,
};
use crate::pipeline::{pair_captures, run_pipeline, PipelineConfig, PipelineError, DEFAULT_FILTER_NS};
use crate::pulse::{DEFAULT_GAP_THRESHOLD_NS, DEFAULT_WARMUP_EXCLUDE};
use crate::residual::{PerfConvention, PlatformCalibration, DEFAULT_K_FACTOR};
use crate::sensitivity::{
    compare_to_constant, filter_sweep, profile_summary, DEFAULT_PROFILE_WARMUP, DEFAULT_SWEEP_NS,
    RECOMMENDED_FILTER_NS,
};
use crate::store::{
    content_digest, sha256_hex, CalibrationStore, LookupPolicy, SessionEntry,
    DEFAULT_DRIFT_THRESHOLD_NS, STORE_ENV,
};
use crate::synth::{builtin_scenario_names, generate_dataset, resolve_scenario, CAPTURE_FILE, ORCHESTRATOR_FILE};

pub const EXIT_ACCEPT: i32 = 0;
pub const EXIT_REJECT: i32 = 1;
pub const EXIT_ALIGNMENT: i32 = 2;
pub const EXIT_INPUT: i32 = 3;

pub const RUN_MANIFEST_FILE: &str = "run-manifest.json";

#[derive(Debug, Parser)]
#[command(name = "gpiocal", version, about = "Calibrate and validate GPIO-bracketed inference timing against logic-analyzer captures")]
pub struct Cli {
    /// What to print on stdout; every format is also written under --out.
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Text)]
    pub format: OutputFormat,
    /// Directory for reports and the run manifest.
    #[arg(long, global = true, default_value = "gpiocal-out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Csv,
    Text,
    Structured,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Derive a platform constant and tolerance from a calibrated-state dataset.
    Calibrate(CalibrateArgs),
    /// Gate a dataset against a calibration.
    Validate(ValidateArgs),
    /// Pair counts and residuals across glitch-filter thresholds.
    Sweep(SweepArgs),
    /// Compare a direct GPIO call profile with a calibrated constant.
    ProfileCompare(ProfileArgs),
    /// Cross-session drift of stored constants.
    Drift(DriftArgs),
    /// Write a synthetic dataset from a scenario.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    /// Directory holding capture.csv and orchestrator.jsonl.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Edge capture file; repeat to give one capture per trial.
    #[arg(long = "capture")]
    pub captures: Vec<PathBuf>,
    /// Orchestrator log (JSON lines).
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = CaptureFormat::NativeNs)]
    pub capture_format: CaptureFormat,
    /// Used when a capture does not declare its own rate.
    #[arg(long, default_value_t = DEFAULT_SAMPLE_RATE_HZ)]
    pub sample_rate_hz: u64,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long, default_value_t = DEFAULT_FILTER_NS)]
    pub filter_ns: u64,
    #[arg(long, value_enum, default_value_t = PerfConvention::Outer)]
    pub perf_convention: PerfConvention,
    #[arg(long, default_value_t = DEFAULT_WARMUP_EXCLUDE)]
    pub warmup_exclude: usize,
    #[arg(long, default_value_t = DEFAULT_GAP_THRESHOLD_NS)]
    pub gap_ns: u64,
}

impl PipelineArgs {
    fn config(&self) -> PipelineConfig {
        PipelineConfig {
            filter_ns: self.filter_ns,
            gap_ns: self.gap_ns,
            warmup_exclude: self.warmup_exclude,
            convention: self.perf_convention,
        }
    }
}

#[derive(Debug, Args)]
pub struct StoreArgs {
    /// Calibration store file.
    #[arg(long, env = STORE_ENV)]
    pub store: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[arg(long)]
    pub platform: String,
    #[arg(long, default_value = "calibrated")]
    pub state_label: String,
    /// Defaults to the platform plus a prefix of the input digest.
    #[arg(long)]
    pub session_id: Option<String>,
    /// RFC 3339; defaults to now.
    #[arg(long)]
    pub created_at: Option<String>,
    #[arg(long, default_value_t = DEFAULT_K_FACTOR)]
    pub k: f64,
    /// Use this tolerance instead of deriving it.
    #[arg(long)]
    pub tau_ns: Option<f64>,
    /// Append the calibration to the store.
    #[arg(long)]
    pub record: bool,
    #[command(flatten)]
    pub store: StoreArgs,
}

#[derive(Debug, Args)]
pub struct LookupArgs {
    /// Constant to gate against; otherwise looked up in the store.
    #[arg(long, allow_hyphen_values = true)]
    pub constant_ns: Option<f64>,
    #[arg(long)]
    pub platform: Option<String>,
    #[arg(long, value_enum, default_value_t = LookupPolicy::LatestSession)]
    pub policy: LookupPolicy,
    #[command(flatten)]
    pub store: StoreArgs,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[arg(long, value_enum, default_value_t = GateMode::PlatformAware)]
    pub mode: GateMode,
    #[arg(long, value_enum, default_value_t = GateStatistic::TrialMedian)]
    pub statistic: GateStatistic,
    /// Tolerance; otherwise the stored calibration's.
    #[arg(long)]
    pub tau_ns: Option<f64>,
    #[command(flatten)]
    pub lookup: LookupArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SWEEP_NS)]
    pub thresholds: Vec<u64>,
    /// Defaults to the number of log records.
    #[arg(long)]
    pub expected_count: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    /// Profile log (JSON lines).
    #[arg(long)]
    pub profile: PathBuf,
    #[arg(long, default_value_t = DEFAULT_PROFILE_WARMUP)]
    pub warmup: usize,
    #[command(flatten)]
    pub lookup: LookupArgs,
}

#[derive(Debug, Args)]
pub struct DriftArgs {
    #[command(flatten)]
    pub store: StoreArgs,
    /// Only this platform; otherwise every platform in the store.
    #[arg(long)]
    pub platform: Option<String>,
    #[arg(long, default_value_t = DEFAULT_DRIFT_THRESHOLD_NS)]
    pub threshold_ns: f64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Built-in scenario name or scenario file.
    #[arg(long, required_unless_present = "list")]
    pub scenario: Option<String>,
    /// List built-in scenarios.
    #[arg(long)]
    pub list: bool,
}

/// An input or configuration problem; always exit 3.
#[derive(Debug)]
pub struct InputError(pub String);

impl<E: std::error::Error> From<E> for InputError {
    fn from(e: E) -> Self {
        InputError(e.to_string())
    }
}

fn input_err(msg: impl Into<String>) -> InputError {
    InputError(msg.into())
}

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub inputs: Vec<InputDigest>,
    pub config: Value,
    pub outputs: Vec<String>,
    pub created_at: String,
}

/// Everything a command produces before it is written out.
pub struct Report {
    pub command: &'static str,
    pub text: String,
    /// Named CSV tables, ns precision.
    pub csv: Vec<(String, String)>,
    pub json: Value,
    pub exit_code: i32,
    pub inputs: Vec<InputDigest>,
    pub config: Value,
}

struct Inputs {
    digests: Vec<InputDigest>,
    texts: Vec<String>,
}

impl Inputs {
    fn new() -> Self {
        Inputs {
            digests: Vec::new(),
            texts: Vec::new(),
        }
    }

    fn read(&mut self, path: &Path) -> Result<String, InputError> {
        let bytes = fs::read(path).map_err(|e| input_err(format!("{}: {e}", path.display())))?;
        self.digests.push(InputDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
        let text = String::from_utf8(bytes)
            .map_err(|_| input_err(format!("{}: not UTF-8 text", path.display())))?;
        self.texts.push(text.clone());
        Ok(text)
    }

    fn combined_digest(&self) -> String {
        content_digest(self.texts.iter().map(|t| t.as_bytes()))
    }
}

struct Dataset {
    captures: Vec<EdgeCapture>,
    trials: Vec<TrialRecords>,
    warnings: Vec<String>,
}

fn load_dataset(args: &DatasetArgs, inputs: &mut Inputs) -> Result<Dataset, InputError> {
    let mut captures = args.captures.clone();
    let mut log = args.log.clone();
    if let Some(dir) = &args.dataset {
        if captures.is_empty() {
            captures.push(dir.join(CAPTURE_FILE));
        }
        log.get_or_insert_with(|| dir.join(ORCHESTRATOR_FILE));
    }
    if captures.is_empty() {
        return Err(input_err("no capture given (use --capture or --dataset)"));
    }
    let log = log.ok_or_else(|| input_err("no orchestrator log given (use --log or --dataset)"))?;

    let mut parsed = Vec::new();
    let mut warnings = Vec::new();
    for path in &captures {
        let text = inputs.read(path)?;
        let opts = ParseOptions {
            sample_rate_hz: args.sample_rate_hz,
            source_id: path.file_stem().map(|s| s.to_string_lossy().into_owned()),
        };
        let p = parse_edge_capture_str(&text, args.capture_format, &opts)
            .map_err(|e| input_err(format!("{}: {e}", path.display())))?;
        warnings.extend(p.warnings.iter().map(|w| format!("{}: {w}", path.display())));
        parsed.push(p.capture);
    }
    let text = inputs.read(&log)?;
    let records = parse_orchestrator_log_str(&text)
        .map_err(|e| input_err(format!("{}: {e}", log.display())))?;
    if records.is_empty() {
        return Err(input_err(format!("{}: no records", log.display())));
    }
    Ok(Dataset {
        captures: parsed,
        trials: group_by_trial(records),
        warnings,
    })
}

fn us(ns: f64) -> String {
    format!("{:.2}", ns / 1e3)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn csv_table(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let fields: Vec<String> = row.iter().map(|f| csv_field(f)).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

fn parse_platform(s: &str) -> Result<Platform, InputError> {
    s.parse::<Platform>().map_err(InputError::from)
}

fn open_store(args: &StoreArgs) -> Result<CalibrationStore, InputError> {
    let path = args
        .store
        .as_ref()
        .ok_or_else(|| input_err(format!("no calibration store (use --store or {STORE_ENV})")))?;
    Ok(CalibrationStore::open(path)?)
}

/// Report for a capture that does not line up with its log: the pairing
/// outcome plus records and pulses per trial.
fn alignment_report(
    command: &'static str,
    err: &PipelineError,
    data: &Dataset,
    config: &PipelineConfig,
    inputs: Vec<InputDigest>,
    config_json: Value,
) -> Report {
    let expected: usize = data.trials.iter().map(|t| t.records.len()).sum();
    let (pairing, segments) = pair_captures(&data.captures, expected, config);
    let mut text = format!("{err}\n");
    let _ = writeln!(
        text,
        "pairs {} (expected {expected}), {} ordering violations",
        pairing.pair_count,
        pairing.violations.len()
    );
    let mut rows = Vec::new();
    let n = data.trials.len().max(segments.len());
    for i in 0..n {
        let trial = data.trials.get(i);
        let id = trial.map_or_else(|| format!("segment-{}", i + 1), |t| t.trial_id.clone());
        let records = trial.map_or(0, |t| t.records.len());
        let pulses = segments.get(i).map_or(0, Vec::len);
        let status = if records == pulses && pairing.violations.is_empty() { "pass" } else { "FAIL" };
        let _ = writeln!(text, "  {id}: {records} records, {pulses} pulses  {status}");
        rows.push(vec![id, records.to_string(), pulses.to_string(), status.to_string()]);
    }
    for v in pairing.violations.iter().take(20) {
        let _ = writeln!(text, "  violation {} at {} ns", v.kind, v.timestamp_ns);
    }
    Report {
        command,
        json: json!({
            "status": "FAIL",
            "error": err.to_string(),
            "pair_count": pairing.pair_count,
            "expected_count": expected,
            "violations": pairing.violations,
            "trials": rows.iter().map(|r| json!({
                "trial_id": r[0], "records": r[1].parse::<usize>().unwrap_or(0),
                "pulses": r[2].parse::<usize>().unwrap_or(0), "status": r[3],
            })).collect::<Vec<_>>(),
        }),
        csv: vec![(
            format!("{command}-alignment"),
            csv_table(&["trial_id", "records", "pulses", "status"], rows),
        )],
        text,
        exit_code: EXIT_ALIGNMENT,
        inputs,
        config: config_json,
    }
}

fn cmd_calibrate(args: &CalibrateArgs) -> Result<Report, InputError> {
    if !(args.k > 0.0 && args.k.is_finite()) {
        return Err(input_err("--k must be a positive number"));
    }
    let platform = parse_platform(&args.platform)?;
    let mut inputs = Inputs::new();
    let data = load_dataset(&args.data, &mut inputs)?;
    let config = args.pipeline.config();
    let digest = inputs.combined_digest();
    let session_id = args
        .session_id
        .clone()
        .unwrap_or_else(|| format!("{platform}-{}", &digest[..12]));
    let created_at = args.created_at.clone().unwrap_or_else(now_rfc3339);
    let config_json = json!({
        "pipeline": config, "platform": platform, "state_label": args.state_label,
        "session_id": session_id, "k": args.k, "tau_ns": args.tau_ns, "record": args.record,
        "store": args.store.store,
    });

    let run = match run_pipeline(&data.captures, &data.trials, &config) {
        Ok(run) => run,
        Err(e) if e.is_alignment_failure() => {
            return Ok(alignment_report("calibrate", &e, &data, &config, inputs.digests, config_json))
        }
        Err(e) => return Err(e.into()),
    };
    let tag = OperatingStateTag::new(platform, &args.state_label, &session_id, &created_at)?;
    let cal = run.calibrate(tag.clone(), args.k, args.tau_ns)?;

    let mut text = String::new();
    let _ = writeln!(text, "platform  C_p (us)  trial medians (us)  std (us)        tau (us)  trials");
    let std = cal
        .std_range_ns
        .map_or("-".to_string(), |(a, b)| format!("{}, {}", us(a), us(b)));
    let _ = writeln!(
        text,
        "{:<9} {:>8}  {:<18}  {:<15} {:>8}  {}",
        tag.platform.to_string(),
        us(cal.c_p_ns),
        format!("{}, {}", us(cal.median_range_ns.0), us(cal.median_range_ns.1)),
        std,
        us(cal.tolerance_ns),
        cal.n_trials
    );
    let _ = writeln!(
        text,
        "trial-median span {} us; tau = {} x worst within-trial std",
        us(cal.median_span_ns()),
        cal.k_factor
    );
    let _ = writeln!(text, "session {session_id}, filter {} ns, {} convention", config.filter_ns, convention_name(config.convention));
    for s in &run.stats {
        let _ = writeln!(
            text,
            "  {}  n={}  median {}  std {}",
            s.trial_id,
            s.n,
            us(s.median_ns),
            s.sample_std_ns.map_or("-".into(), us)
        );
    }
    for w in data.warnings.iter().take(10) {
        let _ = writeln!(text, "warning: {w}");
    }

    let mut stored = None;
    if args.record {
        let mut store = open_store(&args.store)?;
        let id = store.record_session(SessionEntry {
            tag: tag.clone(),
            calibration: cal.clone(),
            created_at: created_at.clone(),
            source_digest: digest.clone(),
        })?;
        let _ = writeln!(text, "recorded as {id}");
        stored = Some(id);
    }

    let summary = csv_table(
        &[
            "platform", "session_id", "c_p_ns", "median_min_ns", "median_max_ns", "std_min_ns",
            "std_max_ns", "tolerance_ns", "k", "n_trials",
        ],
        [vec![
            tag.platform.to_string(),
            session_id.clone(),
            cal.c_p_ns.to_string(),
            cal.median_range_ns.0.to_string(),
            cal.median_range_ns.1.to_string(),
            opt(cal.std_range_ns.map(|r| r.0)),
            opt(cal.std_range_ns.map(|r| r.1)),
            cal.tolerance_ns.to_string(),
            cal.k_factor.to_string(),
            cal.n_trials.to_string(),
        ]],
    );
    let trials = csv_table(
        &["trial_id", "n", "median_ns", "std_ns", "min_ns", "max_ns"],
        run.stats.iter().map(|s| {
            vec![
                s.trial_id.clone(),
                s.n.to_string(),
                s.median_ns.to_string(),
                opt(s.sample_std_ns),
                s.min_ns.to_string(),
                s.max_ns.to_string(),
            ]
        }),
    );
    Ok(Report {
        command: "calibrate",
        text,
        csv: vec![("calibrate".into(), summary), ("calibrate-trials".into(), trials)],
        json: json!({
            "calibration": cal,
            "trials": run.stats,
            "source_digest": digest,
            "stored_as": stored,
            "warnings": data.warnings,
        }),
        exit_code: EXIT_ACCEPT,
        inputs: inputs.digests,
        config: config_json,
    })
}

fn convention_name(c: PerfConvention) -> &'static str {
    match c {
        PerfConvention::Outer => "outer",
        PerfConvention::Inner => "inner",
    }
}

fn lookup_calibration(args: &LookupArgs) -> Result<Option<PlatformCalibration>, InputError> {
    match (&args.platform, &args.store.store) {
        (Some(p), Some(_)) => {
            let store = open_store(&args.store)?;
            Ok(Some(store.lookup_constant(&parse_platform(p)?, args.policy)?))
        }
        _ => Ok(None),
    }
}

fn cmd_validate(args: &ValidateArgs) -> Result<Report, InputError> {
    let stored = if args.lookup.constant_ns.is_some() && args.tau_ns.is_some() {
        None
    } else {
        lookup_calibration(&args.lookup)?
    };
    let constant_ns = args.lookup.constant_ns.or(stored.as_ref().map(|c| c.c_p_ns));
    let tau_ns = args
        .tau_ns
        .or(stored.as_ref().map(|c| c.tolerance_ns))
        .ok_or_else(|| input_err("no tolerance: give --tau-ns or a stored calibration (--platform with --store)"))?;
    let gate = match args.mode {
        GateMode::PlatformAware => GateConfig::platform_aware(
            constant_ns.ok_or_else(|| {
                input_err("missing calibration: give --constant-ns or --platform with --store")
            })?,
            tau_ns,
        ),
        GateMode::UniformRaw => GateConfig::uniform(tau_ns),
    }
    .with_statistic(args.statistic);

    let mut inputs = Inputs::new();
    let data = load_dataset(&args.data, &mut inputs)?;
    let config = args.pipeline.config();
    let config_json = json!({ "pipeline": config, "gate": gate, "policy": args.lookup.policy, "platform": args.lookup.platform });
    let run = match run_pipeline(&data.captures, &data.trials, &config) {
        Ok(run) => run,
        Err(e) if e.is_alignment_failure() => {
            return Ok(alignment_report("validate", &e, &data, &config, inputs.digests, config_json))
        }
        Err(e) => return Err(e.into()),
    };
    let verdict = evaluate_gate(&run.series, &gate)?;
    let status = if verdict.accepted { "ACCEPT" } else { "REJECT" };
    let mut text = String::new();
    let _ = writeln!(text, "{status} ({} gate, {})", gate.mode, statistic_name(gate.statistic));
    let _ = writeln!(text, "{}", verdict.reason);
    let _ = writeln!(
        text,
        "worst residual {} us, margin {} us, {:.1}% failing",
        us(verdict.worst_residual_ns),
        us(verdict.margin_ns(tau_ns)),
        verdict.failing_fraction * 100.0
    );
    let csv = csv_table(
        &["mode", "statistic", "constant_ns", "tolerance_ns", "accepted", "worst_residual_ns", "margin_ns", "failing_fraction", "tested"],
        [vec![
            gate.mode.to_string(),
            statistic_name(gate.statistic).into(),
            opt(gate.constant_ns),
            tau_ns.to_string(),
            verdict.accepted.to_string(),
            verdict.worst_residual_ns.to_string(),
            verdict.margin_ns(tau_ns).to_string(),
            verdict.failing_fraction.to_string(),
            verdict.tested.to_string(),
        ]],
    );
    Ok(Report {
        command: "validate",
        text,
        csv: vec![("validate".into(), csv)],
        json: json!({ "gate": gate, "verdict": verdict, "margin_ns": verdict.margin_ns(tau_ns) }),
        exit_code: if verdict.accepted { EXIT_ACCEPT } else { EXIT_REJECT },
        inputs: inputs.digests,
        config: config_json,
    })
}

fn statistic_name(s: GateStatistic) -> &'static str {
    match s {
        GateStatistic::PerInference => "per-inference",
        GateStatistic::TrialMedian => "trial-median",
    }
}

fn cmd_sweep(args: &SweepArgs) -> Result<Report, InputError> {
    let mut inputs = Inputs::new();
    let data = load_dataset(&args.data, &mut inputs)?;
    let config = args.pipeline.config();
    let expected = args
        .expected_count
        .unwrap_or_else(|| data.trials.iter().map(|t| t.records.len()).sum());
    let rows = filter_sweep(&data.captures, &data.trials, &args.thresholds, expected, &config)?;
    let mut text = String::from("filter (ns)  pairs  status  violations  median delta (us)\n");
    for r in &rows {
        let mark = if r.threshold_ns == RECOMMENDED_FILTER_NS { "  (recommended)" } else { "" };
        let _ = writeln!(
            text,
            "{:>11}  {:>5}  {:<6}  {:>10}  {:>17}{mark}",
            r.threshold_ns,
            r.pair_count,
            r.status.to_string(),
            r.violations,
            r.median_delta_ns.map_or("-".into(), us)
        );
    }
    let _ = writeln!(text, "expected pulse pairs: {expected}");
    let csv = csv_table(
        &["threshold_ns", "pair_count", "status", "violations", "median_delta_ns", "c_p_ns"],
        rows.iter().map(|r| {
            vec![
                r.threshold_ns.to_string(),
                r.pair_count.to_string(),
                r.status.to_string(),
                r.violations.to_string(),
                opt(r.median_delta_ns),
                opt(r.c_p_ns),
            ]
        }),
    );
    Ok(Report {
        command: "sweep",
        text,
        csv: vec![("sweep".into(), csv)],
        json: json!({ "expected_count": expected, "rows": rows }),
        exit_code: EXIT_ACCEPT,
        inputs: inputs.digests,
        config: json!({ "pipeline": config, "thresholds": args.thresholds, "expected_count": expected }),
    })
}

fn cmd_profile_compare(args: &ProfileArgs) -> Result<Report, InputError> {
    let mut inputs = Inputs::new();
    let text_in = inputs.read(&args.profile)?;
    let samples = parse_profile_log_str(&text_in)
        .map_err(|e| input_err(format!("{}: {e}", args.profile.display())))?;
    let constant_ns = match args.lookup.constant_ns {
        Some(c) => c,
        None => lookup_calibration(&args.lookup)?
            .map(|c| c.c_p_ns)
            .ok_or_else(|| input_err("missing calibration: give --constant-ns or --platform with --store"))?,
    };
    let summary = profile_summary(&samples, args.warmup)?;
    let cmp = compare_to_constant(&summary, constant_ns)?;
    let mut text = String::new();
    let _ = writeln!(text, "med(H) (us)  med(L) (us)  med(H+L) (us)  |C_p| (us)");
    let _ = writeln!(
        text,
        "{:>11}  {:>11}  {:>13}  {:>10}",
        us(cmp.med_high_ns),
        us(cmp.med_low_ns),
        us(cmp.med_sum_ns),
        us(cmp.c_p_abs_ns)
    );
    let _ = writeln!(
        text,
        "coverage {:.4} ({:.0}%), residual {:+.2} us, over-prediction {:+.1}%",
        cmp.coverage_ratio,
        cmp.coverage_ratio * 100.0,
        cmp.residual_ns / 1e3,
        cmp.over_prediction_fraction * 100.0
    );
    let _ = writeln!(text, "{} samples after {} warm-up", summary.n, args.warmup);
    let csv = csv_table(
        &["n", "med_high_ns", "med_low_ns", "med_sum_ns", "c_p_abs_ns", "coverage_ratio", "residual_ns", "over_prediction_fraction"],
        [vec![
            summary.n.to_string(),
            cmp.med_high_ns.to_string(),
            cmp.med_low_ns.to_string(),
            cmp.med_sum_ns.to_string(),
            cmp.c_p_abs_ns.to_string(),
            cmp.coverage_ratio.to_string(),
            cmp.residual_ns.to_string(),
            cmp.over_prediction_fraction.to_string(),
        ]],
    );
    Ok(Report {
        command: "profile-compare",
        text,
        csv: vec![("profile-compare".into(), csv)],
        json: json!({ "summary": summary, "comparison": cmp }),
        exit_code: EXIT_ACCEPT,
        inputs: inputs.digests,
        config: json!({ "warmup": args.warmup, "constant_ns": constant_ns, "policy": args.lookup.policy }),
    })
}

fn cmd_drift(args: &DriftArgs) -> Result<Report, InputError> {
    let store = open_store(&args.store)?;
    let platforms: Vec<Platform> = match &args.platform {
        Some(p) => vec![parse_platform(p)?],
        None => {
            let mut all: Vec<Platform> = store.entries().iter().map(|e| e.tag.platform.clone()).collect();
            all.sort();
            all.dedup();
            all
        }
    };
    if platforms.is_empty() {
        return Err(input_err("the store holds no sessions"));
    }
    let reports = platforms
        .iter()
        .map(|p| store.drift_report(p, args.threshold_ns))
        .collect::<Result<Vec<_>, _>>()?;
    let mut text = String::new();
    let mut rows = Vec::new();
    for r in &reports {
        let consts: Vec<String> = r.sessions.iter().map(|(_, c)| us(*c)).collect();
        let _ = writeln!(
            text,
            "{}: sessions [{}] us, range {} us, threshold {} us{}",
            r.platform,
            consts.join(", "),
            us(r.range_ns),
            us(r.threshold_ns),
            if r.flagged { "  DRIFT FLAGGED" } else { "" }
        );
        for (id, c) in &r.sessions {
            rows.push(vec![
                r.platform.to_string(),
                id.clone(),
                c.to_string(),
                r.range_ns.to_string(),
                r.threshold_ns.to_string(),
                r.flagged.to_string(),
            ]);
        }
    }
    let mut inputs = Inputs::new();
    if let Some(path) = store.path() {
        inputs.read(path)?;
    }
    Ok(Report {
        command: "drift",
        text,
        csv: vec![(
            "drift".into(),
            csv_table(&["platform", "session_id", "c_p_ns", "range_ns", "threshold_ns", "flagged"], rows),
        )],
        json: json!({ "reports": reports }),
        exit_code: EXIT_ACCEPT,
        inputs: inputs.digests,
        config: json!({ "threshold_ns": args.threshold_ns, "platform": args.platform }),
    })
}

fn cmd_synth(args: &SynthArgs, out: &Path) -> Result<Report, InputError> {
    if args.list {
        let names: Vec<&str> = builtin_scenario_names().collect();
        let mut text = String::new();
        for n in &names {
            let s = resolve_scenario(n)?;
            let _ = writeln!(text, "{n:<18} {}", s.description);
        }
        return Ok(Report {
            command: "synth",
            text,
            csv: vec![("synth".into(), csv_table(&["scenario"], names.iter().map(|n| vec![n.to_string()])))],
            json: json!({ "scenarios": names }),
            exit_code: EXIT_ACCEPT,
            inputs: Vec::new(),
            config: json!({ "list": true }),
        });
    }
    let name = args.scenario.as_deref().expect("clap requires --scenario");
    let mut inputs = Inputs::new();
    if Path::new(name).is_file() {
        inputs.read(Path::new(name))?;
    }
    let scenario = resolve_scenario(name)?;
    let ds = generate_dataset(&scenario)?;
    let written = ds.write_to(out)?;
    let mut text = format!(
        "scenario {}: {} trials x {} inferences, {} edges ({} glitch edges)\n",
        scenario.name,
        scenario.config.trials,
        scenario.config.inferences_per_trial,
        ds.capture.len(),
        ds.capture.len() - ds.clean_events.len()
    );
    for p in &written {
        let _ = writeln!(text, "  wrote {}", p.display());
    }
    let files: Vec<String> = written.iter().map(|p| p.display().to_string()).collect();
    Ok(Report {
        command: "synth",
        text,
        csv: vec![("synth".into(), csv_table(&["file"], files.iter().map(|f| vec![f.clone()])))],
        json: json!({ "scenario": scenario.name, "files": files }),
        exit_code: EXIT_ACCEPT,
        inputs: inputs.digests,
        config: serde_json::to_value(&scenario).unwrap_or(Value::Null),
    })
}

fn emit(report: &Report, cli: &Cli, stdout: &mut dyn Write) -> Result<(), InputError> {
    let dir = &cli.out;
    fs::create_dir_all(dir).map_err(|e| input_err(format!("{}: {e}", dir.display())))?;
    let mut outputs = Vec::new();
    let mut write = |name: String, body: &str| -> Result<(), InputError> {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| input_err(format!("{}: {e}", path.display())))?;
        outputs.push(path.display().to_string());
        Ok(())
    };
    let json_text = serde_json::to_string_pretty(&report.json).expect("report serializes") + "\n";
    write(format!("{}.txt", report.command), &report.text)?;
    write(format!("{}.json", report.command), &json_text)?;
    for (name, body) in &report.csv {
        write(format!("{name}.csv"), body)?;
    }
    let manifest = RunManifest {
        command: report.command.to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        inputs: report.inputs.clone(),
        config: report.config.clone(),
        outputs,
        created_at: now_rfc3339(),
    };
    let manifest_text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    let path = dir.join(RUN_MANIFEST_FILE);
    fs::write(&path, manifest_text).map_err(|e| input_err(format!("{}: {e}", path.display())))?;

    let shown = match cli.format {
        OutputFormat::Text => report.text.clone(),
        OutputFormat::Structured => json_text,
        OutputFormat::Csv => report.csv.iter().map(|(_, b)| b.as_str()).collect::<Vec<_>>().join("\n"),
    };
    stdout
        .write_all(shown.as_bytes())
        .map_err(|e| input_err(format!("stdout: {e}")))
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_ACCEPT };
            let rendered = e.render().to_string();
            let _ = if e.use_stderr() {
                stderr.write_all(rendered.as_bytes())
            } else {
                stdout.write_all(rendered.as_bytes())
            };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::ProfileCompare(a) => cmd_profile_compare(a),
        Command::Drift(a) => cmd_drift(a),
        Command::Synth(a) => cmd_synth(a, &cli.out),
    };
    match result.and_then(|r| emit(&r, &cli, stdout).map(|_| r.exit_code)) {
        Ok(code) => code,
        Err(InputError(msg)) => {
            let _ = writeln!(stderr, "error: {msg}");
            EXIT_INPUT
        }
    }
}

pub fn run() -> i32 {
    run_with(std::env::args_os(), &mut std::io::stdout(), &mut std::io::stderr())
}
