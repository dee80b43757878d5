//! Flat `key = value` configuration.
//!
//! ```text
//! host = 127.0.0.1
//! port = 8000
//! terrain.raster = raster.asc
//! terrain.contours = contours.csv
//! forecast.params = x_wind_10m
//! forecast.fixture = forecast.ascii
//! poll.period_ms = 1000
//!
//! source.id = turbine1
//! source.csv = telemetry.csv
//! source.speed = 1
//! ```
//!
//! Every `source.id` line opens a new source; the `source.*` keys after it
//! belong to that source. Relative paths resolve against the config file's
//! directory. Lines starting with `#` are comments.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use thiserror::Error;

use crate::metocean::DEFAULT_PUBLICATION_DELAY_HOURS;
use crate::raster::DEFAULT_SEA_LEVEL;
use crate::telemetry::credential_from_env;
use crate::tiles::{NormScope, DEFAULT_TILE_SIZE};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{} config error(s):\n  {}", .0.len(), .0.join("\n  "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerrainConfig {
    pub raster: PathBuf,
    pub contours: PathBuf,
    pub color: Option<PathBuf>,
    pub tile_size: usize,
    pub sea_level: f64,
    pub normalization: NormScope,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastConfig {
    pub params: Vec<String>,
    /// Grid point of the requested series.
    pub y: u32,
    pub x: u32,
    /// Offline DODS ASCII body used instead of the network.
    pub fixture: Option<PathBuf>,
    pub base_url: Option<String>,
    pub refresh: Duration,
    pub publication_delay: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SourceKind {
    Csv {
        path: PathBuf,
        timestamp_column: String,
        channels: Vec<String>,
    },
    /// Scripted [`MockStreamAdapter`](crate::telemetry::adapter::MockStreamAdapter) fed from a CSV.
    Mock {
        script: PathBuf,
        timestamp_column: String,
        channels: Vec<String>,
        credential: String,
    },
}

#[derive(Clone, PartialEq)]
pub struct SourceConfig {
    pub id: String,
    pub kind: SourceKind,
    pub speed: f64,
    pub looping: bool,
}

impl std::fmt::Debug for SourceConfig {
    // keeps credentials out of logs
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match &self.kind {
            SourceKind::Csv { path, .. } => format!("csv {}", path.display()),
            SourceKind::Mock { script, .. } => format!("mock {}", script.display()),
        };
        f.debug_struct("SourceConfig")
            .field("id", &self.id)
            .field("kind", &kind)
            .field("speed", &self.speed)
            .field("looping", &self.looping)
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub base_dir: PathBuf,
    pub host: String,
    pub port: u16,
    pub terrain: Option<TerrainConfig>,
    /// Prebuilt tile set to serve.
    pub tile_dir: Option<PathBuf>,
    pub forecast: Option<ForecastConfig>,
    pub poll_period: Duration,
    pub poll_clients: usize,
    pub sources: Vec<SourceConfig>,
}

pub const DEFAULT_PORT: u16 = 8000;
pub const DEFAULT_POLL_PERIOD: Duration = Duration::from_secs(1);
pub const DEFAULT_POLL_CLIENTS: usize = 4;
pub const DEFAULT_FORECAST_REFRESH: Duration = Duration::from_secs(3600);

const TOP_KEYS: &[&str] = &[
    "host",
    "port",
    "terrain.raster",
    "terrain.contours",
    "terrain.color",
    "terrain.tile_size",
    "terrain.sea_level",
    "terrain.normalization",
    "terrain.tile_dir",
    "forecast.params",
    "forecast.y",
    "forecast.x",
    "forecast.fixture",
    "forecast.base_url",
    "forecast.refresh_secs",
    "forecast.delay_hours",
    "poll.period_ms",
    "poll.clients",
];

const SOURCE_KEYS: &[&str] = &[
    "source.kind",
    "source.csv",
    "source.script",
    "source.timestamp",
    "source.channels",
    "source.speed",
    "source.loop",
    "source.credential",
    "source.credential_env",
];

pub fn load_config(path: impl AsRef<Path>) -> Result<Config, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_config(&text, &base)
}

#[derive(Default)]
struct Group {
    line: usize,
    pairs: Vec<(usize, String, String)>,
}

impl Group {
    fn get(&self, key: &str) -> Option<(usize, &str)> {
        self.pairs
            .iter()
            .find(|(_, k, _)| k == key)
            .map(|(l, _, v)| (*l, v.as_str()))
    }
}

struct Errors(Vec<String>);

impl Errors {
    fn at(&mut self, line: usize, msg: impl std::fmt::Display) {
        self.0.push(format!("line {line}: {msg}"));
    }

    fn parse<T: FromStr>(&mut self, g: &Group, key: &str, default: T) -> T {
        match g.get(key) {
            None => default,
            Some((l, v)) => v.parse().unwrap_or_else(|_| {
                self.at(l, format!("`{key}`: cannot parse `{v}`"));
                default
            }),
        }
    }
}

fn list(v: &str) -> Vec<String> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}

fn parse_bool(v: &str) -> Option<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Some(true),
        "false" | "no" | "0" | "off" => Some(false),
        _ => None,
    }
}

/// Parses config text; every problem found is reported in one error.
/// Drops a `#` comment that starts the line or follows whitespace, so values
/// such as URL fragments keep an embedded `#`.
fn strip_comment(line: &str) -> &str {
    let mut prev_ws = true;
    for (i, ch) in line.char_indices() {
        if ch == '#' && prev_ws {
            return &line[..i];
        }
        prev_ws = ch.is_whitespace();
    }
    line
}

pub fn parse_config(text: &str, base_dir: &Path) -> Result<Config, ConfigError> {
    let mut errs = Errors(Vec::new());
    let mut top = Group::default();
    let mut sources: Vec<Group> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            errs.at(n, format!("expected `key = value`, got `{line}`"));
            continue;
        };
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if k == "source.id" {
            sources.push(Group {
                line: n,
                pairs: vec![(n, k, v)],
            });
        } else if k.starts_with("source.") {
            if !SOURCE_KEYS.contains(&k.as_str()) {
                errs.at(n, format!("unknown key `{k}`"));
            } else if let Some(g) = sources.last_mut() {
                if g.get(&k).is_some() {
                    errs.at(n, format!("duplicate key `{k}` in source"));
                } else {
                    g.pairs.push((n, k, v));
                }
            } else {
                errs.at(n, format!("`{k}` before any `source.id`"));
            }
        } else if !TOP_KEYS.contains(&k.as_str()) {
            errs.at(n, format!("unknown key `{k}`"));
        } else if top.get(&k).is_some() {
            errs.at(n, format!("duplicate key `{k}`"));
        } else {
            top.pairs.push((n, k, v));
        }
    }

    let resolve = |v: &str| base_dir.join(v);

    let host = top.get("host").map_or("127.0.0.1".to_string(), |(_, v)| v.to_string());
    let port = errs.parse(&top, "port", DEFAULT_PORT);

    let terrain = match (top.get("terrain.raster"), top.get("terrain.contours")) {
        (None, None) => {
            for k in ["terrain.color", "terrain.tile_size", "terrain.sea_level", "terrain.normalization"] {
                if let Some((l, _)) = top.get(k) {
                    errs.at(l, format!("`{k}` without `terrain.raster`"));
                }
            }
            None
        }
        (Some((l, _)), None) => {
            errs.at(l, "`terrain.raster` requires `terrain.contours`");
            None
        }
        (None, Some((l, _))) => {
            errs.at(l, "`terrain.contours` requires `terrain.raster`");
            None
        }
        (Some((_, r)), Some((_, c))) => {
            let tile_size = errs.parse(&top, "terrain.tile_size", DEFAULT_TILE_SIZE);
            if tile_size == 0 {
                errs.at(top.get("terrain.tile_size").unwrap().0, "`terrain.tile_size` must be positive");
            }
            let normalization = match top.get("terrain.normalization") {
                None => NormScope::Global,
                Some((l, v)) => NormScope::parse(v).unwrap_or_else(|| {
                    errs.at(l, format!("`terrain.normalization` must be global or per_tile, got `{v}`"));
                    NormScope::Global
                }),
            };
            Some(TerrainConfig {
                raster: resolve(r),
                contours: resolve(c),
                color: top.get("terrain.color").map(|(_, v)| resolve(v)),
                tile_size,
                sea_level: errs.parse(&top, "terrain.sea_level", DEFAULT_SEA_LEVEL),
                normalization,
            })
        }
    };
    let tile_dir = top.get("terrain.tile_dir").map(|(_, v)| resolve(v));

    let forecast = match top.get("forecast.params") {
        None => {
            for k in ["forecast.fixture", "forecast.base_url", "forecast.y", "forecast.x"] {
                if let Some((l, _)) = top.get(k) {
                    errs.at(l, format!("`{k}` without `forecast.params`"));
                }
            }
            None
        }
        Some((l, v)) => {
            let params = list(v);
            if params.is_empty() {
                errs.at(l, "`forecast.params` is empty");
            }
            let refresh_secs: u64 = errs.parse(&top, "forecast.refresh_secs", DEFAULT_FORECAST_REFRESH.as_secs());
            if refresh_secs == 0 {
                errs.at(top.get("forecast.refresh_secs").unwrap().0, "`forecast.refresh_secs` must be positive");
            }
            let delay_hours: u64 = errs.parse(&top, "forecast.delay_hours", DEFAULT_PUBLICATION_DELAY_HOURS);
            Some(ForecastConfig {
                params,
                y: errs.parse(&top, "forecast.y", 0),
                x: errs.parse(&top, "forecast.x", 0),
                fixture: top.get("forecast.fixture").map(|(_, v)| resolve(v)),
                base_url: top.get("forecast.base_url").map(|(_, v)| v.to_string()),
                refresh: Duration::from_secs(refresh_secs),
                publication_delay: Duration::from_secs(delay_hours * 3600),
            })
        }
    };

    let period_ms: u64 = errs.parse(&top, "poll.period_ms", DEFAULT_POLL_PERIOD.as_millis() as u64);
    if period_ms == 0 {
        errs.at(top.get("poll.period_ms").unwrap().0, "`poll.period_ms` must be positive");
    }
    let poll_clients = errs.parse(&top, "poll.clients", DEFAULT_POLL_CLIENTS);
    if poll_clients == 0 {
        errs.at(top.get("poll.clients").unwrap().0, "`poll.clients` must be positive");
    }

    let mut seen = HashSet::new();
    let mut out_sources = Vec::new();
    for g in &sources {
        let id = g.get("source.id").unwrap().1.to_string();
        let valid_id = !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
        if !valid_id {
            errs.at(g.line, format!("invalid source id `{id}`"));
        }
        if !seen.insert(id.clone()) {
            errs.at(g.line, format!("duplicate source id `{id}`"));
        }
        let speed: f64 = errs.parse(g, "source.speed", 1.0);
        if !(speed > 0.0 && speed.is_finite()) {
            errs.at(g.get("source.speed").unwrap().0, format!("source `{id}`: speed must be positive"));
        }
        let looping = match g.get("source.loop") {
            None => false,
            Some((l, v)) => parse_bool(v).unwrap_or_else(|| {
                errs.at(l, format!("`source.loop`: cannot parse `{v}`"));
                false
            }),
        };
        let timestamp_column = g.get("source.timestamp").map_or("timestamp".into(), |(_, v)| v.to_string());
        let channels = g.get("source.channels").map(|(_, v)| list(v)).unwrap_or_default();
        let kind_name = g.get("source.kind").map_or("csv", |(_, v)| v);
        let kind = match kind_name {
            "csv" => {
                for k in ["source.script", "source.credential", "source.credential_env"] {
                    if let Some((l, _)) = g.get(k) {
                        errs.at(l, format!("`{k}` is only valid for mock sources"));
                    }
                }
                match g.get("source.csv") {
                    Some((_, v)) => Some(SourceKind::Csv {
                        path: resolve(v),
                        timestamp_column,
                        channels,
                    }),
                    None => {
                        errs.at(g.line, format!("source `{id}` needs `source.csv`"));
                        None
                    }
                }
            }
            "mock" => {
                let credential = match (g.get("source.credential"), g.get("source.credential_env")) {
                    (Some(_), Some((l, _))) => {
                        errs.at(l, "set only one of `source.credential` and `source.credential_env`");
                        None
                    }
                    (Some((_, v)), None) => Some(v.to_string()),
                    (None, Some((l, var))) => {
                        let c = credential_from_env(var);
                        if c.is_none() {
                            errs.at(l, format!("environment variable `{var}` is unset or empty"));
                        }
                        c
                    }
                    (None, None) => {
                        errs.at(g.line, format!("mock source `{id}` needs a credential"));
                        None
                    }
                };
                match (g.get("source.script"), credential) {
                    (Some((_, v)), Some(credential)) => Some(SourceKind::Mock {
                        script: resolve(v),
                        timestamp_column,
                        channels,
                        credential,
                    }),
                    (None, _) => {
                        errs.at(g.line, format!("mock source `{id}` needs `source.script`"));
                        None
                    }
                    _ => None,
                }
            }
            other => {
                errs.at(g.get("source.kind").unwrap().0, format!("unknown source kind `{other}`"));
                None
            }
        };
        if let Some(kind) = kind {
            out_sources.push(SourceConfig { id, kind, speed, looping });
        }
    }

    if !errs.0.is_empty() {
        return Err(ConfigError::Invalid(errs.0));
    }
    Ok(Config {
        base_dir: base_dir.to_path_buf(),
        host,
        port,
        terrain,
        tile_dir,
        forecast,
        poll_period: Duration::from_millis(period_ms),
        poll_clients,
        sources: out_sources,
    })
}
