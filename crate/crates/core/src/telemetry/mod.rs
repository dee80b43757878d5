//! Asset placement manifests, archived telemetry, and live stream adapters.

pub mod adapter;
mod replay;

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use replay::{replay, spawn_replay, RecordSink, ReplayError, ReplayHandle, ReplayReport, ReplaySchedule, SinkError};

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: duplicate asset_id `{id}`")]
    DuplicateAsset { line: usize, id: String },
    #[error("line {line}: expected 6 columns (asset_id x y z yaw model_ref), found {found}")]
    Arity { line: usize, found: usize },
    #[error("line {line}: {what} `{value}` is not a finite number")]
    BadNumber {
        line: usize,
        what: &'static str,
        value: String,
    },
    #[error("line {line}: yaw {yaw} outside [0, 360)")]
    Yaw { line: usize, yaw: f64 },
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: unparseable timestamp `{value}`")]
    Timestamp { row: usize, value: String },
    #[error("empty telemetry file")]
    Empty,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
}

/// One entry of the placement manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssetPlacement {
    pub asset_id: String,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Degrees in `[0, 360)`.
    pub yaw: f64,
    pub model_ref: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssetManifest {
    pub entries: Vec<AssetPlacement>,
}

pub fn parse_manifest(path: impl AsRef<Path>) -> Result<AssetManifest, TelemetryError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| TelemetryError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_manifest_str(&text)
}

/// Whitespace-separated `asset_id x y z yaw model_ref`; `#` starts a comment.
pub fn parse_manifest_str(text: &str) -> Result<AssetManifest, TelemetryError> {
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("");
        let cols: Vec<&str> = content.split_whitespace().collect();
        if cols.is_empty() {
            continue;
        }
        if cols.len() != 6 {
            return Err(TelemetryError::Arity {
                line,
                found: cols.len(),
            });
        }
        let num = |idx: usize, what: &'static str| -> Result<f64, TelemetryError> {
            cols[idx]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| TelemetryError::BadNumber {
                    line,
                    what,
                    value: cols[idx].to_string(),
                })
        };
        let entry = AssetPlacement {
            asset_id: cols[0].to_string(),
            x: num(1, "x")?,
            y: num(2, "y")?,
            z: num(3, "z")?,
            yaw: num(4, "yaw")?,
            model_ref: cols[5].to_string(),
        };
        if !(0.0..360.0).contains(&entry.yaw) {
            return Err(TelemetryError::Yaw { line, yaw: entry.yaw });
        }
        if !seen.insert(entry.asset_id.clone()) {
            return Err(TelemetryError::DuplicateAsset {
                line,
                id: entry.asset_id,
            });
        }
        entries.push(entry);
    }
    Ok(AssetManifest { entries })
}

/// One timestamped sample of a source's channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord {
    pub source_id: String,
    pub timestamp: DateTime<Utc>,
    pub values: BTreeMap<String, f64>,
}

impl TelemetryRecord {
    pub fn new(
        source_id: impl Into<String>,
        timestamp: DateTime<Utc>,
        values: BTreeMap<String, f64>,
    ) -> Result<Self, TelemetryError> {
        let rec = Self {
            source_id: source_id.into(),
            timestamp,
            values,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<(), TelemetryError> {
        if self.values.is_empty() {
            return Err(TelemetryError::InvalidRecord("no channels".into()));
        }
        if let Some(k) = self.values.keys().find(|k| k.is_empty()) {
            return Err(TelemetryError::InvalidRecord(format!("empty channel name `{k}`")));
        }
        if let Some((k, v)) = self.values.iter().find(|(_, v)| !v.is_finite()) {
            return Err(TelemetryError::InvalidRecord(format!("channel `{k}` is {v}")));
        }
        Ok(())
    }
}

/// Parses RFC 3339, common naive ISO-8601 layouts (taken as UTC), or epoch seconds.
pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M%#z", "%Y-%m-%d %H:%M:%S%#z"] {
        if let Ok(t) = DateTime::parse_from_str(s, fmt) {
            return Some(t.with_timezone(&Utc));
        }
    }
    let naive = s.strip_suffix('Z').unwrap_or(s);
    for fmt in [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ] {
        if let Ok(t) = NaiveDateTime::parse_from_str(naive, fmt) {
            return Some(Utc.from_utc_datetime(&t));
        }
    }
    let secs: f64 = s.parse().ok().filter(|v: &f64| v.is_finite())?;
    let whole = secs.floor();
    let nanos = ((secs - whole) * 1e9).round() as u32;
    Utc.timestamp_opt(whole as i64, nanos.min(999_999_999)).single()
}

/// Reads a CSV archive into records sorted by timestamp.
///
/// With an empty `channel_columns`, every column except the timestamp is a
/// channel. Cells that are empty or non-numeric are omitted from their record;
/// rows left without any channel are dropped.
pub fn load_csv(
    path: impl AsRef<Path>,
    source_id: &str,
    timestamp_column: &str,
    channel_columns: &[String],
) -> Result<Vec<TelemetryRecord>, TelemetryError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| TelemetryError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_csv(&text, source_id, timestamp_column, channel_columns)
}

pub fn parse_csv(
    text: &str,
    source_id: &str,
    timestamp_column: &str,
    channel_columns: &[String],
) -> Result<Vec<TelemetryRecord>, TelemetryError> {
    if text.trim().is_empty() {
        return Err(TelemetryError::Empty);
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| TelemetryError::MissingColumn(name.to_string()))
    };
    let ts_col = find(timestamp_column)?;
    let channels: Vec<(String, usize)> = if channel_columns.is_empty() {
        headers
            .iter()
            .enumerate()
            .filter(|&(i, h)| i != ts_col && !h.is_empty())
            .map(|(i, h)| (h.to_string(), i))
            .collect()
    } else {
        channel_columns
            .iter()
            .map(|c| Ok((c.clone(), find(c)?)))
            .collect::<Result<_, TelemetryError>>()?
    };

    let mut records = Vec::new();
    let mut rows = 0usize;
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        rows += 1;
        let raw_ts = row.get(ts_col).unwrap_or("");
        let timestamp = parse_timestamp(raw_ts).ok_or_else(|| TelemetryError::Timestamp {
            row: i + 1,
            value: raw_ts.to_string(),
        })?;
        let values: BTreeMap<String, f64> = channels
            .iter()
            .filter_map(|(name, idx)| {
                let v = row.get(*idx)?.parse::<f64>().ok().filter(|v| v.is_finite())?;
                Some((name.clone(), v))
            })
            .collect();
        if values.is_empty() {
            tracing::debug!(row = i + 1, "row has no numeric channels, dropped");
            continue;
        }
        records.push(TelemetryRecord {
            source_id: source_id.to_string(),
            timestamp,
            values,
        });
    }
    if rows == 0 {
        return Err(TelemetryError::Empty);
    }
    records.sort_by_key(|r| r.timestamp);
    Ok(records)
}

/// Reads a credential from the environment; credentials never travel on the command line.
pub fn credential_from_env(var: &str) -> Option<String> {
    std::env::var(var).ok().filter(|s| !s.is_empty())
}
