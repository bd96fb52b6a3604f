//! Calibration store: one JSON document holding every recorded session, plus
//! cross-session drift and constant lookup.

use std::cmp::Ordering;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ingest::{OperatingStateTag, Platform};
use crate::residual::PlatformCalibration;

pub const SCHEMA_VERSION: u32 = 1;
/// Environment variable naming the default store file.
pub const STORE_ENV: &str = "GPIOCAL_STORE";
/// Drift range above which sessions are flagged (2 us).
pub const DEFAULT_DRIFT_THRESHOLD_NS: f64 = 2_000.0;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("store {path} is not a valid calibration document: {source}")]
    Format {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("store schema version {found} is not supported (expected {SCHEMA_VERSION})")]
    Schema { found: u32 },
    #[error("session {key} already recorded from different inputs ({existing} vs {offered})")]
    Conflict {
        key: String,
        existing: String,
        offered: String,
    },
    #[error("no sessions recorded for platform {0}")]
    UnknownPlatform(String),
}

/// Plain hex SHA-256 of one file's bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hex SHA-256 over the concatenated parts; each part is length-prefixed so
/// that moving bytes between files changes the digest.
pub fn content_digest<'a>(parts: impl IntoIterator<Item = &'a [u8]>) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEntry {
    pub tag: OperatingStateTag,
    pub calibration: PlatformCalibration,
    pub created_at: String,
    pub source_digest: String,
}

impl SessionEntry {
    pub fn key(&self) -> String {
        format!("{}/{}", self.tag.platform, self.tag.session_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StoreDocument {
    schema_version: u32,
    sessions: Vec<SessionEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum LookupPolicy {
    #[default]
    LatestSession,
    PooledMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub platform: Platform,
    /// Session constants in creation order.
    pub sessions: Vec<(String, f64)>,
    pub range_ns: f64,
    pub threshold_ns: f64,
    pub flagged: bool,
}

impl DriftReport {
    pub fn session_constants_ns(&self) -> Vec<f64> {
        self.sessions.iter().map(|(_, c)| *c).collect()
    }
}

/// Range of a set of session constants, flagged when it exceeds the
/// threshold.
pub fn drift_of(platform: Platform, sessions: Vec<(String, f64)>, threshold_ns: f64) -> DriftReport {
    let (lo, hi) = sessions
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, c)| {
            (lo.min(*c), hi.max(*c))
        });
    let range_ns = if sessions.is_empty() { 0.0 } else { hi - lo };
    DriftReport {
        platform,
        sessions,
        range_ns,
        threshold_ns,
        flagged: range_ns > threshold_ns,
    }
}

/// An in-memory view of the store file. Mutations go through `&mut self`
/// and are written back with an atomic rename.
#[derive(Debug, Clone)]
pub struct CalibrationStore {
    path: Option<PathBuf>,
    doc: StoreDocument,
}

impl Default for CalibrationStore {
    fn default() -> Self {
        CalibrationStore::in_memory()
    }
}

impl CalibrationStore {
    pub fn in_memory() -> Self {
        CalibrationStore {
            path: None,
            doc: StoreDocument {
                schema_version: SCHEMA_VERSION,
                sessions: Vec::new(),
            },
        }
    }

    /// Opens the store at `path`, starting empty if the file does not exist.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let path = path.into();
        let doc = match fs::read_to_string(&path) {
            Ok(text) => {
                let doc: StoreDocument =
                    serde_json::from_str(&text).map_err(|source| StoreError::Format {
                        path: path.clone(),
                        source,
                    })?;
                if doc.schema_version != SCHEMA_VERSION {
                    return Err(StoreError::Schema {
                        found: doc.schema_version,
                    });
                }
                doc
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => StoreDocument {
                schema_version: SCHEMA_VERSION,
                sessions: Vec::new(),
            },
            Err(source) => return Err(StoreError::Io { path, source }),
        };
        Ok(CalibrationStore {
            path: Some(path),
            doc,
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn entries(&self) -> &[SessionEntry] {
        &self.doc.sessions
    }

    /// Appends a session and persists the store. Re-recording the same
    /// session from the same inputs is a no-op returning the same key.
    pub fn record_session(&mut self, entry: SessionEntry) -> Result<String, StoreError> {
        let key = entry.key();
        if let Some(existing) = self.doc.sessions.iter().find(|e| e.key() == key) {
            if existing.source_digest == entry.source_digest {
                return Ok(key);
            }
            return Err(StoreError::Conflict {
                key,
                existing: existing.source_digest.clone(),
                offered: entry.source_digest,
            });
        }
        self.doc.sessions.push(entry);
        self.save()?;
        Ok(key)
    }

    fn save(&self) -> Result<(), StoreError> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let io = |source| StoreError::Io {
            path: path.clone(),
            source,
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io)?;
        }
        let mut text = serde_json::to_string_pretty(&self.doc).expect("store serializes");
        text.push('\n');
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, text).map_err(io)?;
        fs::rename(&tmp, path).map_err(io)
    }

    /// Sessions of one platform ordered by `created_at`, ties by session id.
    pub fn sessions_for(&self, platform: &Platform) -> Vec<&SessionEntry> {
        let mut out: Vec<&SessionEntry> = self
            .doc
            .sessions
            .iter()
            .filter(|e| &e.tag.platform == platform)
            .collect();
        out.sort_by(|a, b| creation_order(a, b));
        out
    }

    pub fn drift_report(
        &self,
        platform: &Platform,
        threshold_ns: f64,
    ) -> Result<DriftReport, StoreError> {
        let sessions = self.sessions_for(platform);
        if sessions.is_empty() {
            return Err(StoreError::UnknownPlatform(platform.to_string()));
        }
        Ok(drift_of(
            platform.clone(),
            sessions
                .iter()
                .map(|e| (e.tag.session_id.clone(), e.calibration.c_p_ns))
                .collect(),
            threshold_ns,
        ))
    }

    pub fn lookup_constant(
        &self,
        platform: &Platform,
        policy: LookupPolicy,
    ) -> Result<PlatformCalibration, StoreError> {
        let sessions = self.sessions_for(platform);
        let latest = sessions
            .last()
            .ok_or_else(|| StoreError::UnknownPlatform(platform.to_string()))?;
        match policy {
            LookupPolicy::LatestSession => Ok(latest.calibration.clone()),
            LookupPolicy::PooledMean => Ok(pool(&sessions, latest)),
        }
    }
}

fn creation_order(a: &SessionEntry, b: &SessionEntry) -> Ordering {
    let parsed = |s: &str| chrono::DateTime::parse_from_rfc3339(s).ok();
    match (parsed(&a.created_at), parsed(&b.created_at)) {
        (Some(x), Some(y)) => x.cmp(&y),
        _ => a.created_at.cmp(&b.created_at),
    }
    .then_with(|| a.tag.session_id.cmp(&b.tag.session_id))
}

/// Trial-count-weighted mean of session constants.
fn pool(sessions: &[&SessionEntry], latest: &SessionEntry) -> PlatformCalibration {
    let total: usize = sessions.iter().map(|e| e.calibration.n_trials).sum();
    let weighted: f64 = sessions
        .iter()
        .map(|e| e.calibration.c_p_ns * e.calibration.n_trials as f64)
        .sum();
    let cals: Vec<&PlatformCalibration> = sessions.iter().map(|e| &e.calibration).collect();
    let trial_medians_ns: Vec<f64> = cals
        .iter()
        .flat_map(|c| c.trial_medians_ns.iter().copied())
        .collect();
    let median_range_ns = cals.iter().fold(latest.calibration.median_range_ns, |acc, c| {
        (acc.0.min(c.median_range_ns.0), acc.1.max(c.median_range_ns.1))
    });
    let std_range_ns = cals
        .iter()
        .filter_map(|c| c.std_range_ns)
        .reduce(|a, b| (a.0.min(b.0), a.1.max(b.1)));
    PlatformCalibration {
        platform: latest.tag.clone(),
        c_p_ns: weighted / total as f64,
        trial_medians_ns,
        median_range_ns,
        std_range_ns,
        n_trials: total,
        tolerance_ns: cals.iter().map(|c| c.tolerance_ns).fold(0.0, f64::max),
        k_factor: latest.calibration.k_factor,
    }
}
