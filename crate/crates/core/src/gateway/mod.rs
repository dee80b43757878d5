//! HTTP snapshot gateway.
//!
//! Holds the latest telemetry snapshot per source, cached forecasts and a
//! loaded tile set, and serves them to polling clients:
//!
//! | path | body |
//! |---|---|
//! | `/health` | `{"status":"ok"}` |
//! | `/endpoints` | registered paths |
//! | `/snapshot/{source_id}` | latest snapshot document |
//! | `/forecast/{param}?horizon=N` | cached series, leads `0..=N` |
//! | `/terrain/index` | tile index |
//! | `/terrain/tile/{row}/{col}/{kind}` | PNG bytes, `kind` is `height` or `color` |
//!
//! There is no authentication; restrict exposure with the bind address.

mod server;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use chrono::{DateTime, SecondsFormat, SubsecRound, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metocean::ForecastSeries;
use crate::telemetry::{RecordSink, SinkError, TelemetryRecord};
use crate::tiles::{parse_index, parse_sidecar, TileError, TileIndex, TileMeta};

pub use server::{serve, ServeConfig, ServerHandle};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("cannot bind {host}:{port}: {source}")]
    Bind {
        host: String,
        port: u16,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid bind address `{0}`")]
    Address(String),
    #[error("duplicate endpoint `{0}`")]
    DuplicateEndpoint(String),
    #[error("invalid endpoint path `{0}`")]
    InvalidPath(String),
    #[error("tile store: {0}")]
    Tiles(#[from] TileError),
    #[error("server task failed: {0}")]
    Server(String),
}

/// Latest published state of one source.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub source_id: String,
    pub sequence: u64,
    pub server_time: DateTime<Utc>,
    pub record: TelemetryRecord,
    body: Arc<str>,
}

/// Wire form of a [`Snapshot`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotDocument {
    pub source_id: String,
    pub sequence: u64,
    pub server_time: DateTime<Utc>,
    pub timestamp: DateTime<Utc>,
    pub values: BTreeMap<String, f64>,
}

impl Snapshot {
    fn new(source_id: &str, sequence: u64, record: TelemetryRecord) -> Self {
        let server_time = Utc::now().trunc_subsecs(6);
        let body = snapshot_json(source_id, sequence, server_time, &record);
        Self {
            source_id: source_id.to_string(),
            sequence,
            server_time,
            record,
            body: body.into(),
        }
    }

    /// The serialized document, fixed at publish time.
    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn document(&self) -> SnapshotDocument {
        SnapshotDocument {
            source_id: self.source_id.clone(),
            sequence: self.sequence,
            server_time: self.server_time,
            timestamp: self.record.timestamp,
            values: self.record.values.clone(),
        }
    }
}

fn snapshot_json(source_id: &str, sequence: u64, server_time: DateTime<Utc>, record: &TelemetryRecord) -> String {
    serde_json::json!({
        "source_id": source_id,
        "sequence": sequence,
        "server_time": server_time.to_rfc3339_opts(SecondsFormat::Micros, true),
        "timestamp": record.timestamp.to_rfc3339_opts(SecondsFormat::AutoSi, true),
        "values": record.values,
    })
    .to_string()
}

type Slot = RwLock<Option<Arc<Snapshot>>>;

/// Last-writer-wins snapshot per source.
///
/// Each source has its own lock holding an `Arc<Snapshot>`. Publishing
/// replaces the `Arc`; readers clone it, so they only ever see whole
/// snapshots and never hold the lock while serializing a response.
#[derive(Debug, Default)]
pub struct SnapshotStore {
    slots: RwLock<HashMap<String, Arc<Slot>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Lookup {
    Found(Arc<Snapshot>),
    /// Registered, nothing published yet.
    Empty,
    Unknown,
}

impl SnapshotStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Makes `source_id` known before its first publish. Idempotent.
    pub fn register(&self, source_id: &str) {
        self.slot(source_id);
    }

    fn slot(&self, source_id: &str) -> Arc<Slot> {
        if let Some(s) = self.slots.read().unwrap().get(source_id) {
            return s.clone();
        }
        self.slots
            .write()
            .unwrap()
            .entry(source_id.to_string())
            .or_default()
            .clone()
    }

    /// Replaces the snapshot for `source_id` and returns its sequence number.
    pub fn publish(&self, source_id: &str, record: TelemetryRecord) -> u64 {
        let slot = self.slot(source_id);
        let mut guard = slot.write().unwrap();
        let sequence = guard.as_ref().map_or(1, |s| s.sequence + 1);
        *guard = Some(Arc::new(Snapshot::new(source_id, sequence, record)));
        sequence
    }

    pub fn get(&self, source_id: &str) -> Lookup {
        let Some(slot) = self.slots.read().unwrap().get(source_id).cloned() else {
            return Lookup::Unknown;
        };
        let snap = slot.read().unwrap().clone();
        match snap {
            Some(s) => Lookup::Found(s),
            None => Lookup::Empty,
        }
    }

    pub fn sources(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.slots.read().unwrap().keys().cloned().collect();
        ids.sort();
        ids
    }
}

/// Publishes every accepted record to one source of a store.
pub struct StoreSink {
    store: Arc<SnapshotStore>,
    source_id: String,
}

impl StoreSink {
    pub fn new(store: Arc<SnapshotStore>, source_id: impl Into<String>) -> Self {
        let source_id = source_id.into();
        store.register(&source_id);
        Self { store, source_id }
    }
}

impl RecordSink for StoreSink {
    fn accept(&mut self, record: TelemetryRecord) -> Result<(), SinkError> {
        self.store.publish(&self.source_id, record);
        Ok(())
    }
}

/// Latest forecast series per parameter.
#[derive(Debug, Default)]
pub struct ForecastCache {
    series: RwLock<HashMap<String, Arc<ForecastSeries>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastDocument {
    pub param: String,
    pub cycle: String,
    pub units: String,
    pub lead_hours: Vec<u32>,
    pub values: Vec<f64>,
}

impl ForecastDocument {
    pub fn from_series(s: &ForecastSeries) -> Self {
        Self {
            param: s.param.clone(),
            cycle: s.cycle.stamp(),
            units: s.units.clone(),
            lead_hours: s.lead_hours.clone(),
            values: s.values.clone(),
        }
    }
}

impl ForecastCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(&self, series: ForecastSeries) {
        self.series
            .write()
            .unwrap()
            .insert(series.param.clone(), Arc::new(series));
    }

    pub fn get(&self, param: &str) -> Option<Arc<ForecastSeries>> {
        self.series.read().unwrap().get(param).cloned()
    }

    pub fn is_empty(&self) -> bool {
        self.series.read().unwrap().is_empty()
    }

    pub fn params(&self) -> Vec<String> {
        let mut p: Vec<String> = self.series.read().unwrap().keys().cloned().collect();
        p.sort();
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TileKind {
    Height,
    Color,
}

impl TileKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "height" => Some(Self::Height),
            "color" => Some(Self::Color),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
struct StoredTile {
    meta: TileMeta,
    height: Arc<[u8]>,
    color: Option<Arc<[u8]>>,
}

/// A tile set held in memory as the exact bytes found on disk.
#[derive(Debug, Clone)]
pub struct TileStore {
    dir: PathBuf,
    index: TileIndex,
    tiles: HashMap<(usize, usize), StoredTile>,
}

impl TileStore {
    /// Reads `index.txt` and every file it lists.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, TileError> {
        let dir = dir.as_ref().to_path_buf();
        let read = |name: &str| -> Result<Vec<u8>, TileError> {
            let p = dir.join(name);
            fs::read(&p).map_err(|source| TileError::Io { path: p, source })
        };
        let index = parse_index(&String::from_utf8_lossy(&read("index.txt")?))?;
        let mut tiles = HashMap::new();
        for e in &index.entries {
            let meta = parse_sidecar(&String::from_utf8_lossy(&read(&e.sidecar_file)?))?;
            let tile = StoredTile {
                meta,
                height: read(&e.height_file)?.into(),
                color: e.color_file.as_deref().map(read).transpose()?.map(Into::into),
            };
            tiles.insert((e.row, e.col), tile);
        }
        Ok(Self { dir, index, tiles })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn index(&self) -> &TileIndex {
        &self.index
    }

    pub fn tile_bytes(&self, row: usize, col: usize, kind: TileKind) -> Option<Arc<[u8]>> {
        let t = self.tiles.get(&(row, col))?;
        match kind {
            TileKind::Height => Some(t.height.clone()),
            TileKind::Color => t.color.clone(),
        }
    }

    /// JSON mirror of `index.txt`, with each tile's georeferencing inlined.
    pub fn index_document(&self) -> serde_json::Value {
        let ix = &self.index;
        let tiles: Vec<serde_json::Value> = ix
            .entries
            .iter()
            .map(|e| {
                let m = &self.tiles[&(e.row, e.col)].meta;
                serde_json::json!({
                    "row": e.row,
                    "col": e.col,
                    "height_file": e.height_file,
                    "color_file": e.color_file,
                    "sidecar_file": e.sidecar_file,
                    "origin_x": m.origin_x,
                    "origin_y": m.origin_y,
                    "cell_size": m.cell_size,
                    "norm_min": m.norm_min,
                    "norm_max": m.norm_max,
                    "pad_right": m.pad_right,
                    "pad_top": m.pad_top,
                })
            })
            .collect();
        serde_json::json!({
            "tile_size": ix.tile_size,
            "rows": ix.rows,
            "cols": ix.cols,
            "width": ix.width,
            "height": ix.height,
            "origin_x": ix.origin_x,
            "origin_y": ix.origin_y,
            "cell_size": ix.cell_size,
            "norm_min": ix.norm_min,
            "norm_max": ix.norm_max,
            "normalization": ix.normalization.as_str(),
            "tiles": tiles,
        })
    }
}

/// Synchronous document source for custom endpoints, run off the async workers.
pub trait DocumentProvider: Send + Sync {
    fn document(&self) -> Result<serde_json::Value, String>;
}

impl<F> DocumentProvider for F
where
    F: Fn() -> Result<serde_json::Value, String> + Send + Sync,
{
    fn document(&self) -> Result<serde_json::Value, String> {
        self()
    }
}

/// The fixed set of endpoints a server answers. Immutable once built.
#[derive(Clone, Default)]
pub struct EndpointRegistry {
    pub(crate) snapshots: Option<Arc<SnapshotStore>>,
    pub(crate) forecasts: Option<Arc<ForecastCache>>,
    pub(crate) tiles: Option<Arc<TileStore>>,
    pub(crate) custom: Vec<(String, Arc<dyn DocumentProvider>)>,
}

impl EndpointRegistry {
    pub fn builder() -> RegistryBuilder {
        RegistryBuilder::default()
    }

    /// Route templates, always including `/health` and `/endpoints`.
    pub fn paths(&self) -> Vec<String> {
        let mut p = vec!["/health".to_string(), "/endpoints".to_string()];
        if self.snapshots.is_some() {
            p.push("/snapshot/{source_id}".into());
        }
        if self.forecasts.is_some() {
            p.push("/forecast/{param}".into());
        }
        if self.tiles.is_some() {
            p.push("/terrain/index".into());
            p.push("/terrain/tile/{row}/{col}/{kind}".into());
        }
        p.extend(self.custom.iter().map(|(path, _)| path.clone()));
        p
    }

    pub fn snapshots(&self) -> Option<&Arc<SnapshotStore>> {
        self.snapshots.as_ref()
    }

    pub fn forecasts(&self) -> Option<&Arc<ForecastCache>> {
        self.forecasts.as_ref()
    }

    pub fn tiles(&self) -> Option<&Arc<TileStore>> {
        self.tiles.as_ref()
    }
}

#[derive(Default)]
pub struct RegistryBuilder {
    inner: EndpointRegistry,
}

impl RegistryBuilder {
    pub fn snapshots(mut self, store: Arc<SnapshotStore>) -> Self {
        self.inner.snapshots = Some(store);
        self
    }

    pub fn forecasts(mut self, cache: Arc<ForecastCache>) -> Self {
        self.inner.forecasts = Some(cache);
        self
    }

    pub fn tiles(mut self, tiles: Arc<TileStore>) -> Self {
        self.inner.tiles = Some(tiles);
        self
    }

    /// Adds a fixed path such as `/myendpoint` answered by `provider`.
    pub fn custom(mut self, path: impl Into<String>, provider: Arc<dyn DocumentProvider>) -> Self {
        self.inner.custom.push((path.into(), provider));
        self
    }

    pub fn build(self) -> Result<EndpointRegistry, GatewayError> {
        let fixed = self.inner.paths();
        let mut seen = std::collections::HashSet::new();
        for p in &fixed {
            if !seen.insert(p.as_str()) {
                return Err(GatewayError::DuplicateEndpoint(p.clone()));
            }
        }
        let reserved = ["/snapshot/", "/forecast/", "/terrain/"];
        for (p, _) in &self.inner.custom {
            let ok = p.len() > 1
                && p.starts_with('/')
                && !p.ends_with('/')
                && p[1..].split('/').all(|seg| {
                    !seg.is_empty() && seg.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
                });
            if !ok {
                return Err(GatewayError::InvalidPath(p.clone()));
            }
            if reserved.iter().any(|r| p.starts_with(r)) {
                return Err(GatewayError::DuplicateEndpoint(p.clone()));
            }
        }
        Ok(self.inner)
    }
}
