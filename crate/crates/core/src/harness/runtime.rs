//! Wires a [`Config`] into a running gateway with its feeds.

use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use chrono::Utc;
use thiserror::Error;

use crate::gateway::{serve, EndpointRegistry, ForecastCache, GatewayError, ServeConfig, ServerHandle, SnapshotStore, StoreSink, TileStore};
use crate::metocean::{
    latest_cycle, parse_ascii, ForecastClient, HttpTransport, MetoceanError, ParamRequest, DEFAULT_TIMEOUT,
};
use crate::telemetry::adapter::{DeliveryMode, MockStreamAdapter, StreamAdapter};
use crate::telemetry::{load_csv, spawn_replay, ReplayError, ReplayHandle, ReplayReport, ReplaySchedule, TelemetryError, TelemetryRecord};
use crate::tiles::TileError;

use super::config::{Config, ForecastConfig, SourceConfig, SourceKind};

#[derive(Debug, Error)]
pub enum StartError {
    #[error("source `{id}`: {source}")]
    Source {
        id: String,
        #[source]
        source: TelemetryError,
    },
    #[error("tile directory {path}: {source}")]
    Tiles {
        path: PathBuf,
        #[source]
        source: TileError,
    },
    #[error("forecast fixture {path}: {source}")]
    Fixture {
        path: PathBuf,
        #[source]
        source: MetoceanError,
    },
    #[error("forecast fixture {path}: {source}")]
    FixtureIo {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("forecast: {0}")]
    Forecast(MetoceanError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone)]
pub struct LoadedSource {
    pub config: SourceConfig,
    pub records: Vec<TelemetryRecord>,
}

pub fn load_source(src: &SourceConfig) -> Result<LoadedSource, StartError> {
    let (path, ts, channels) = match &src.kind {
        SourceKind::Csv {
            path,
            timestamp_column,
            channels,
        } => (path, timestamp_column, channels),
        SourceKind::Mock {
            script,
            timestamp_column,
            channels,
            ..
        } => (script, timestamp_column, channels),
    };
    let records = load_csv(path, &src.id, ts, channels).map_err(|source| StartError::Source {
        id: src.id.clone(),
        source,
    })?;
    Ok(LoadedSource {
        config: src.clone(),
        records,
    })
}

pub fn forecast_requests(fc: &ForecastConfig) -> Result<Vec<ParamRequest>, MetoceanError> {
    fc.params
        .iter()
        .map(|p| ParamRequest::point_series(p.clone(), fc.y, fc.x))
        .collect()
}

/// Parses the offline fixture as the cycle current at `now`.
pub fn load_fixture(fc: &ForecastConfig, path: &std::path::Path) -> Result<Vec<crate::metocean::ForecastSeries>, StartError> {
    let body = std::fs::read_to_string(path).map_err(|source| StartError::FixtureIo {
        path: path.to_path_buf(),
        source,
    })?;
    let fixture_err = |source| StartError::Fixture {
        path: path.to_path_buf(),
        source,
    };
    let reqs = forecast_requests(fc).map_err(fixture_err)?;
    let cycle = latest_cycle(Utc::now(), fc.publication_delay);
    parse_ascii(&body, &reqs, cycle).map_err(fixture_err)
}

struct Feed {
    id: String,
    kind: FeedKind,
}

enum FeedKind {
    Replay(ReplayHandle),
    Thread {
        stop: Arc<AtomicBool>,
        join: JoinHandle<usize>,
    },
}

/// A gateway and everything feeding it.
pub struct RunningGateway {
    pub server: ServerHandle,
    pub store: Arc<SnapshotStore>,
    pub forecasts: Arc<ForecastCache>,
    pub tiles: Option<Arc<TileStore>>,
    pub sources: Vec<LoadedSource>,
    feeds: Vec<Feed>,
    refresher: Option<(Arc<AtomicBool>, JoinHandle<()>)>,
}

#[derive(Debug)]
pub struct FeedOutcome {
    pub source_id: String,
    /// `None` for adapter feeds, which count deliveries only.
    pub replay: Option<Result<ReplayReport, ReplayError>>,
    pub delivered: usize,
}

/// Loads everything the config names, then binds the server. Feeds are not
/// started; call [`RunningGateway::start_feeds`].
pub async fn start_gateway(config: &Config) -> Result<RunningGateway, StartError> {
    let sources = config.sources.iter().map(load_source).collect::<Result<Vec<_>, _>>()?;
    let store = Arc::new(SnapshotStore::new());
    for s in &sources {
        store.register(&s.config.id);
    }
    let forecasts = Arc::new(ForecastCache::new());
    let tiles = match &config.tile_dir {
        Some(dir) => Some(Arc::new(TileStore::load(dir).map_err(|source| StartError::Tiles {
            path: dir.clone(),
            source,
        })?)),
        None => None,
    };

    let mut refresher = None;
    if let Some(fc) = &config.forecast {
        match &fc.fixture {
            Some(path) => {
                for s in load_fixture(fc, path)? {
                    forecasts.put(s);
                }
            }
            None => {
                let reqs = forecast_requests(fc).map_err(StartError::Forecast)?;
                refresher = Some(spawn_refresher(fc.clone(), reqs, forecasts.clone()));
            }
        }
    }

    let mut reg = EndpointRegistry::builder().snapshots(store.clone());
    if config.forecast.is_some() {
        reg = reg.forecasts(forecasts.clone());
    }
    if let Some(t) = &tiles {
        reg = reg.tiles(t.clone());
    }
    let server = serve(&ServeConfig::new(config.host.clone(), config.port), reg.build()?).await?;
    Ok(RunningGateway {
        server,
        store,
        forecasts,
        tiles,
        sources,
        feeds: Vec::new(),
        refresher,
    })
}

/// Background forecast refresh on a plain thread; the blocking HTTP client
/// must stay off the async workers.
fn spawn_refresher(
    fc: ForecastConfig,
    reqs: Vec<ParamRequest>,
    cache: Arc<ForecastCache>,
) -> (Arc<AtomicBool>, JoinHandle<()>) {
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    let join = std::thread::Builder::new()
        .name("forecast-refresh".into())
        .spawn(move || {
            let transport = match HttpTransport::new(DEFAULT_TIMEOUT) {
                Ok(t) => Arc::new(t),
                Err(e) => {
                    tracing::error!("forecast transport: {e}");
                    return;
                }
            };
            let mut client = ForecastClient::new(transport).with_publication_delay(fc.publication_delay);
            if let Some(base) = &fc.base_url {
                client = client.with_base_url(base.clone());
            }
            while !flag.load(Ordering::Relaxed) {
                match client.forecast(Utc::now(), &reqs) {
                    Ok((outcome, series)) => {
                        tracing::info!(url = %outcome.url, fell_back = outcome.fell_back, "forecast refreshed");
                        for s in series {
                            cache.put(s);
                        }
                    }
                    Err(e) => tracing::warn!("forecast refresh failed: {e}"),
                }
                let next = Instant::now() + fc.refresh;
                while Instant::now() < next && !flag.load(Ordering::Relaxed) {
                    std::thread::sleep(Duration::from_millis(100));
                }
            }
        })
        .expect("spawn refresher");
    (stop, join)
}

impl StartError {
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Self::Gateway(_))
    }
}

impl RunningGateway {
    /// Concrete URL paths currently answerable.
    pub fn server_paths(&self) -> Vec<String> {
        let mut p = vec!["/health".to_string(), "/endpoints".to_string()];
        p.extend(self.store.sources().iter().map(|s| format!("/snapshot/{s}")));
        p.extend(self.forecasts.params().iter().map(|f| format!("/forecast/{f}")));
        if self.tiles.is_some() {
            p.push("/terrain/index".into());
        }
        p
    }

    /// Starts a replay or adapter feed for every configured source.
    pub fn start_feeds(&mut self) -> Result<(), StartError> {
        for src in &self.sources {
            let cfg = &src.config;
            let feed = match &cfg.kind {
                SourceKind::Csv { .. } => {
                    let schedule = ReplaySchedule::new(src.records.clone(), cfg.speed, cfg.looping).map_err(|source| {
                        StartError::Source {
                            id: cfg.id.clone(),
                            source,
                        }
                    })?;
                    FeedKind::Replay(spawn_replay(schedule, StoreSink::new(self.store.clone(), &cfg.id)))
                }
                SourceKind::Mock {
                    credential, channels, ..
                } => {
                    let stop = Arc::new(AtomicBool::new(false));
                    let join = spawn_adapter_feed(
                        MockStreamAdapter::new(
                            credential.clone(),
                            src.records.clone(),
                            DeliveryMode::RealTime { speed: cfg.speed },
                        ),
                        credential.clone(),
                        channels.clone(),
                        cfg.looping,
                        StoreSink::new(self.store.clone(), &cfg.id),
                        stop.clone(),
                    );
                    FeedKind::Thread { stop, join }
                }
            };
            self.feeds.push(Feed {
                id: cfg.id.clone(),
                kind: feed,
            });
        }
        Ok(())
    }

    pub fn feeds_finished(&self) -> bool {
        self.feeds.iter().all(|f| match &f.kind {
            FeedKind::Replay(h) => h.is_finished(),
            FeedKind::Thread { join, .. } => join.is_finished(),
        })
    }

    /// Stops every feed, then the server, waiting for in-flight responses.
    pub async fn shutdown(self) -> Result<Vec<FeedOutcome>, GatewayError> {
        let mut outcomes = Vec::new();
        for f in self.feeds {
            match f.kind {
                FeedKind::Replay(h) => {
                    let r = tokio::task::spawn_blocking(move || h.shutdown()).await.expect("join replay");
                    outcomes.push(FeedOutcome {
                        source_id: f.id,
                        delivered: r.as_ref().map_or(0, |r| r.delivered),
                        replay: Some(r),
                    });
                }
                FeedKind::Thread { stop, join } => {
                    stop.store(true, Ordering::Relaxed);
                    // adapter streams may be mid-sleep; give them a moment, then detach
                    let deadline = Instant::now() + Duration::from_secs(1);
                    while !join.is_finished() && Instant::now() < deadline {
                        tokio::time::sleep(Duration::from_millis(10)).await;
                    }
                    let delivered = if join.is_finished() { join.join().unwrap_or(0) } else { 0 };
                    outcomes.push(FeedOutcome {
                        source_id: f.id,
                        replay: None,
                        delivered,
                    });
                }
            }
        }
        if let Some((stop, join)) = self.refresher {
            stop.store(true, Ordering::Relaxed);
            let _ = tokio::task::spawn_blocking(move || join.join()).await;
        }
        self.server.shutdown().await?;
        Ok(outcomes)
    }
}

fn spawn_adapter_feed<A: StreamAdapter + 'static>(
    mut adapter: A,
    credential: String,
    channels: Vec<String>,
    looping: bool,
    mut sink: StoreSink,
    stop: Arc<AtomicBool>,
) -> JoinHandle<usize> {
    use crate::telemetry::RecordSink;
    std::thread::Builder::new()
        .name("adapter-feed".into())
        .spawn(move || {
            let mut delivered = 0;
            if let Err(e) = adapter.authenticate(&credential) {
                tracing::error!("adapter authentication failed: {e}");
                return 0;
            }
            loop {
                let stream = match adapter.subscribe(&channels) {
                    Ok(s) => s,
                    Err(e) => {
                        tracing::error!("adapter subscribe failed: {e}");
                        return delivered;
                    }
                };
                for rec in stream {
                    if stop.load(Ordering::Relaxed) {
                        return delivered;
                    }
                    if sink.accept(rec).is_ok() {
                        delivered += 1;
                    }
                }
                if !looping || stop.load(Ordering::Relaxed) {
                    return delivered;
                }
            }
        })
        .expect("spawn adapter feed")
}
