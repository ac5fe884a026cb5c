//! File-based dataset store with a manifest and per-kind retention.
//!
//! Layout of a dataset directory:
//!
//! ```text
//! manifest.json
//! 2024-03-01/trace_<start>_<end>.csv
//! 2024-03-01/indicators_<start>_<end>.csv
//! 2024-03-01/power_<start>_<end>.csv
//! ```
//!
//! Each file holds the records of one kind falling on one UTC day, in the same
//! CSV formats used elsewhere in the crate. The manifest lists every file
//! with its time span, record count and SHA-256. Raw traces are kept for a
//! number of days, indicators and power samples for a number of months.
//! A single writer is enforced with a lock file; the manifest is replaced by
//! write-then-rename.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Months, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::indicators::{read_tuples_csv, write_tuples_csv, IndicatorError, IndicatorSeries};
use crate::num::MICROS_PER_SEC;
use crate::power_ingest::{read_power_log, write_power_log, PowerError, PowerSample};
use crate::trace_ingest::{read_stream_csv, write_stream_csv, PacketRecord, TraceError};

pub const MANIFEST_FILE: &str = "manifest.json";
const LOCK_FILE: &str = ".dcmon.lock";
const MICROS_PER_DAY: i64 = 86_400 * MICROS_PER_SEC;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o failure on {path}: {source}")]
    IoFailure { path: PathBuf, source: std::io::Error },
    #[error("{kind} span [{start_ts}, {end_ts}] overlaps {existing}")]
    ManifestConflict {
        kind: ArtifactKind,
        start_ts: i64,
        end_ts: i64,
        existing: String,
    },
    #[error("dataset is locked by another writer ({0})")]
    Locked(PathBuf),
    #[error("checksum mismatch for {0}")]
    ChecksumMismatch(String),
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("invalid retention policy: {0}")]
    InvalidPolicy(String),
    #[error("timestamp {0} is out of calendar range")]
    TimestampRange(i64),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Indicator(#[from] IndicatorError),
    #[error(transparent)]
    Power(#[from] PowerError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::IoFailure {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArtifactKind {
    Trace,
    Indicators,
    Power,
}

impl ArtifactKind {
    fn as_str(self) -> &'static str {
        match self {
            ArtifactKind::Trace => "trace",
            ArtifactKind::Indicators => "indicators",
            ArtifactKind::Power => "power",
        }
    }
}

impl std::fmt::Display for ArtifactKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How long each kind of artifact is kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetentionPolicy {
    pub network_trace_days: u32,
    pub indicator_months: u32,
    pub power_months: u32,
}

impl RetentionPolicy {
    /// Aggregates must outlive raw traces. A month counts as 30 days here.
    pub fn new(network_trace_days: u32, indicator_months: u32, power_months: u32) -> Result<Self, StoreError> {
        if (indicator_months as u64) * 30 < network_trace_days as u64 {
            return Err(StoreError::InvalidPolicy(format!(
                "indicators ({indicator_months} months) must be kept at least as long as traces ({network_trace_days} days)"
            )));
        }
        Ok(Self {
            network_trace_days,
            indicator_months,
            power_months,
        })
    }

    /// Entries of `kind` whose newest record is older than this are pruned.
    pub fn cutoff(&self, kind: ArtifactKind, now_micros: i64) -> Result<i64, StoreError> {
        let months = |m: u32| -> Result<i64, StoreError> {
            let now = DateTime::<Utc>::from_timestamp_micros(now_micros).ok_or(StoreError::TimestampRange(now_micros))?;
            // Beyond chrono's calendar range everything is retained.
            if m > 3_000_000 {
                return Ok(i64::MIN);
            }
            Ok(now
                .checked_sub_months(Months::new(m))
                .map_or(i64::MIN, |t| t.timestamp_micros()))
        };
        match kind {
            ArtifactKind::Trace => Ok(now_micros.saturating_sub((self.network_trace_days as i64).saturating_mul(MICROS_PER_DAY))),
            ArtifactKind::Indicators => months(self.indicator_months),
            ArtifactKind::Power => months(self.power_months),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the dataset directory, `/`-separated.
    pub path: String,
    pub kind: ArtifactKind,
    pub start_ts: i64,
    pub end_ts: i64,
    pub records: u64,
    pub checksum_sha256: String,
    /// Wall-clock start of second 0 for indicator files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin_ts: Option<i64>,
}

impl ManifestEntry {
    fn overlaps(&self, kind: ArtifactKind, start: i64, end: i64) -> bool {
        self.kind == kind && self.start_ts <= end && start <= self.end_ts
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self, StoreError> {
        let path = dir.join(MANIFEST_FILE);
        match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text).map_err(|e| StoreError::InvalidManifest(e.to_string())),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    /// Write-new-then-rename.
    fn save(&self, dir: &Path) -> Result<(), StoreError> {
        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        let text = serde_json::to_string_pretty(self).map_err(|e| StoreError::InvalidManifest(e.to_string()))?;
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(text.as_bytes()).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
        let dst = dir.join(MANIFEST_FILE);
        fs::rename(&tmp, &dst).map_err(io_err(&dst))
    }
}

/// Exclusive writer lock held for the lifetime of the guard.
struct WriterLock {
    path: PathBuf,
}

impl WriterLock {
    fn acquire(dir: &Path) -> Result<Self, StoreError> {
        let path = dir.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(StoreError::Locked(path)),
            Err(e) => Err(io_err(&path)(e)),
        }
    }
}

impl Drop for WriterLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Everything a dataset can hold.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Artifacts {
    pub traces: Vec<PacketRecord>,
    pub indicators: Vec<IndicatorSeries>,
    pub power: Vec<PowerSample<f64>>,
}

fn day_of(ts_micros: i64) -> Result<String, StoreError> {
    DateTime::<Utc>::from_timestamp_micros(ts_micros)
        .map(|d| d.format("%Y-%m-%d").to_string())
        .ok_or(StoreError::TimestampRange(ts_micros))
}

struct Pending {
    entry: ManifestEntry,
    bytes: Vec<u8>,
}

/// Splits `items` into runs of consecutive items on the same UTC day.
fn by_day<T>(items: &[T], ts: impl Fn(&T) -> i64) -> Result<Vec<(String, &[T])>, StoreError> {
    let mut out: Vec<(String, &[T])> = Vec::new();
    let mut start = 0;
    for i in 1..=items.len() {
        let split = i == items.len() || ts(&items[i]).div_euclid(MICROS_PER_DAY) != ts(&items[start]).div_euclid(MICROS_PER_DAY);
        if split {
            out.push((day_of(ts(&items[start]))?, &items[start..i]));
            start = i;
        }
    }
    Ok(out)
}

fn pending(
    kind: ArtifactKind,
    day: &str,
    start_ts: i64,
    end_ts: i64,
    records: usize,
    bytes: Vec<u8>,
    origin_ts: Option<i64>,
) -> Pending {
    let checksum_sha256 = hex::encode(Sha256::digest(&bytes));
    Pending {
        entry: ManifestEntry {
            path: format!("{day}/{kind}_{start_ts}_{end_ts}.csv"),
            kind,
            start_ts,
            end_ts,
            records: records as u64,
            checksum_sha256,
            origin_ts,
        },
        bytes,
    }
}

fn stage(artifacts: &Artifacts) -> Result<Vec<Pending>, StoreError> {
    let mut out = Vec::new();
    for (day, chunk) in by_day(&artifacts.traces, |r| r.ts_micros)? {
        let mut bytes = Vec::new();
        write_stream_csv(&mut bytes, chunk)?;
        let (lo, hi) = span(chunk.iter().map(|r| r.ts_micros));
        out.push(pending(ArtifactKind::Trace, &day, lo, hi, chunk.len(), bytes, None));
    }
    for series in &artifacts.indicators {
        let at = |t: &crate::indicators::IndicatorTuple| series.second_start_micros(t.second_index);
        for (day, chunk) in by_day(&series.tuples, at)? {
            let mut bytes = Vec::new();
            write_tuples_csv(&mut bytes, chunk)?;
            let (lo, hi) = span(chunk.iter().map(at));
            out.push(pending(
                ArtifactKind::Indicators,
                &day,
                lo,
                hi,
                chunk.len(),
                bytes,
                Some(series.origin_micros),
            ));
        }
    }
    for (day, chunk) in by_day(&artifacts.power, |s| s.ts_micros)? {
        let mut bytes = Vec::new();
        write_power_log(&mut bytes, chunk)?;
        let (lo, hi) = span(chunk.iter().map(|s| s.ts_micros));
        out.push(pending(ArtifactKind::Power, &day, lo, hi, chunk.len(), bytes, None));
    }
    Ok(out)
}

fn span(ts: impl Iterator<Item = i64>) -> (i64, i64) {
    ts.fold((i64::MAX, i64::MIN), |(lo, hi), t| (lo.min(t), hi.max(t)))
}

/// Writes `artifacts` into day partitions and records them in the manifest.
/// Nothing is written when any new span overlaps an existing entry of the
/// same kind.
pub fn persist(dataset_dir: impl AsRef<Path>, artifacts: &Artifacts) -> Result<Manifest, StoreError> {
    let dir = dataset_dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let _lock = WriterLock::acquire(dir)?;
    let mut manifest = Manifest::load(dir)?;
    let staged = stage(artifacts)?;

    for (i, p) in staged.iter().enumerate() {
        let e = &p.entry;
        let clash = manifest
            .entries
            .iter()
            .chain(staged[..i].iter().map(|q| &q.entry))
            .find(|x| x.overlaps(e.kind, e.start_ts, e.end_ts));
        if let Some(x) = clash {
            return Err(StoreError::ManifestConflict {
                kind: e.kind,
                start_ts: e.start_ts,
                end_ts: e.end_ts,
                existing: x.path.clone(),
            });
        }
    }

    for p in &staged {
        let path = dir.join(&p.entry.path);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        fs::write(&path, &p.bytes).map_err(io_err(&path))?;
    }
    manifest.entries.extend(staged.into_iter().map(|p| p.entry));
    manifest
        .entries
        .sort_by(|a, b| (a.kind, a.start_ts, &a.path).cmp(&(b.kind, b.start_ts, &b.path)));
    manifest.save(dir)?;
    Ok(manifest)
}

/// Reads every manifest entry back, verifying checksums. Records come back
/// in time order per kind; indicator files are regrouped by series origin.
pub fn load(dataset_dir: impl AsRef<Path>) -> Result<Artifacts, StoreError> {
    let dir = dataset_dir.as_ref();
    let mut manifest = Manifest::load(dir)?;
    manifest.entries.sort_by_key(|e| (e.kind, e.start_ts));
    let mut out = Artifacts::default();
    let mut series: BTreeMap<i64, IndicatorSeries> = BTreeMap::new();
    for e in &manifest.entries {
        let path = dir.join(&e.path);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        if hex::encode(Sha256::digest(&bytes)) != e.checksum_sha256 {
            return Err(StoreError::ChecksumMismatch(e.path.clone()));
        }
        match e.kind {
            ArtifactKind::Trace => out.traces.extend(read_stream_csv(bytes.as_slice())?),
            ArtifactKind::Power => out.power.extend(read_power_log::<f64, _>(bytes.as_slice())?),
            ArtifactKind::Indicators => {
                let origin = e
                    .origin_ts
                    .ok_or_else(|| StoreError::InvalidManifest(format!("{} lacks origin_ts", e.path)))?;
                let s = series.entry(origin).or_insert_with(|| IndicatorSeries {
                    origin_micros: origin,
                    ..Default::default()
                });
                s.tuples.extend(read_tuples_csv(bytes.as_slice())?);
            }
        }
    }
    out.indicators = series
        .into_values()
        .map(|mut s| {
            s.seconds = s.tuples.iter().map(|t| t.second_index + 1).max().unwrap_or(0);
            s
        })
        .collect();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PruneReport {
    pub removed: Vec<ManifestEntry>,
    pub kept: usize,
}

/// Removes every entry whose newest record is older than its kind's cutoff.
/// The manifest is swapped first, files deleted after, so a crash in between
/// leaves only unreferenced files behind.
pub fn prune(dataset_dir: impl AsRef<Path>, policy: &RetentionPolicy, now_micros: i64) -> Result<PruneReport, StoreError> {
    let dir = dataset_dir.as_ref();
    let _lock = WriterLock::acquire(dir)?;
    let manifest = Manifest::load(dir)?;
    let cutoffs = [ArtifactKind::Trace, ArtifactKind::Indicators, ArtifactKind::Power]
        .into_iter()
        .map(|k| Ok((k, policy.cutoff(k, now_micros)?)))
        .collect::<Result<BTreeMap<_, _>, StoreError>>()?;

    let (removed, kept): (Vec<_>, Vec<_>) = manifest
        .entries
        .into_iter()
        .partition(|e| e.end_ts < cutoffs[&e.kind]);
    if removed.is_empty() {
        return Ok(PruneReport {
            removed,
            kept: kept.len(),
        });
    }
    let kept_len = kept.len();
    Manifest { entries: kept }.save(dir)?;
    for e in &removed {
        let path = dir.join(&e.path);
        match fs::remove_file(&path) {
            Ok(()) => {}
            Err(err) if err.kind() == std::io::ErrorKind::NotFound => {}
            Err(err) => return Err(io_err(&path)(err)),
        }
        if let Some(parent) = path.parent() {
            // Only succeeds once the partition is empty.
            let _ = fs::remove_dir(parent);
        }
    }
    Ok(PruneReport {
        removed,
        kept: kept_len,
    })
}
