use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::Deserialize;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use super::{EndpointRegistry, ForecastDocument, GatewayError, Lookup, TileKind};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServeConfig {
    pub host: String,
    /// 0 picks a free port.
    pub port: u16,
}

impl ServeConfig {
    pub fn new(host: impl Into<String>, port: u16) -> Self {
        Self { host: host.into(), port }
    }
}

/// A running server. Dropping the handle leaves the server running until
/// the runtime shuts down; call [`ServerHandle::shutdown`] to stop it cleanly.
pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<std::io::Result<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Base URL a local client can reach; wildcard binds map to loopback.
    pub fn base_url(&self) -> String {
        let ip = if self.addr.ip().is_unspecified() {
            match self.addr {
                SocketAddr::V4(_) => "127.0.0.1".to_string(),
                SocketAddr::V6(_) => "[::1]".to_string(),
            }
        } else {
            match self.addr {
                SocketAddr::V4(a) => a.ip().to_string(),
                SocketAddr::V6(a) => format!("[{}]", a.ip()),
            }
        };
        format!("http://{ip}:{}", self.addr.port())
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base_url())
    }

    /// Stops accepting connections and waits for in-flight responses.
    pub async fn shutdown(mut self) -> Result<(), GatewayError> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        match self.task.await {
            Ok(Ok(())) => Ok(()),
            Ok(Err(e)) => Err(GatewayError::Server(e.to_string())),
            Err(e) => Err(GatewayError::Server(e.to_string())),
        }
    }
}

/// Binds `host:port` and starts answering the registry's endpoints.
pub async fn serve(config: &ServeConfig, registry: EndpointRegistry) -> Result<ServerHandle, GatewayError> {
    let listener = tokio::net::TcpListener::bind((config.host.as_str(), config.port))
        .await
        .map_err(|source| GatewayError::Bind {
            host: config.host.clone(),
            port: config.port,
            source,
        })?;
    let addr = listener.local_addr().map_err(|source| GatewayError::Bind {
        host: config.host.clone(),
        port: config.port,
        source,
    })?;
    let app = router(Arc::new(registry));
    let (tx, rx) = oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async move {
                let _ = rx.await;
            })
            .await
    });
    tracing::info!("listening on http://{addr}/");
    Ok(ServerHandle {
        addr,
        shutdown: Some(tx),
        task,
    })
}

type Shared = Arc<EndpointRegistry>;

fn router(reg: Shared) -> Router {
    let mut r = Router::new()
        .route("/health", get(health))
        .route("/endpoints", get(endpoints));
    if reg.snapshots.is_some() {
        r = r.route("/snapshot/{source_id}", get(snapshot));
    }
    if reg.forecasts.is_some() {
        r = r.route("/forecast/{param}", get(forecast));
    }
    if reg.tiles.is_some() {
        r = r
            .route("/terrain/index", get(tile_index))
            .route("/terrain/tile/{row}/{col}/{kind}", get(tile));
    }
    for (path, provider) in &reg.custom {
        let provider = provider.clone();
        r = r.route(
            path,
            get(move || async move {
                match tokio::task::spawn_blocking(move || provider.document()).await {
                    Ok(Ok(doc)) => Json(doc).into_response(),
                    Ok(Err(msg)) => error(StatusCode::INTERNAL_SERVER_ERROR, &msg),
                    Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, &e.to_string()),
                }
            }),
        );
    }
    r.fallback(|| async { error(StatusCode::NOT_FOUND, "no such endpoint") })
        .with_state(reg)
}

fn error(status: StatusCode, msg: &str) -> Response {
    (status, Json(serde_json::json!({ "error": msg }))).into_response()
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn endpoints(State(reg): State<Shared>) -> Json<serde_json::Value> {
    Json(serde_json::json!({
        "endpoints": reg.paths(),
        "sources": reg.snapshots.as_ref().map(|s| s.sources()).unwrap_or_default(),
        "forecasts": reg.forecasts.as_ref().map(|f| f.params()).unwrap_or_default(),
    }))
}

async fn snapshot(State(reg): State<Shared>, Path(source_id): Path<String>) -> Response {
    let store = reg.snapshots.as_ref().expect("route registered with store");
    match store.get(&source_id) {
        Lookup::Found(s) => ([(header::CONTENT_TYPE, "application/json")], s.body().to_string()).into_response(),
        Lookup::Empty => error(StatusCode::SERVICE_UNAVAILABLE, "no data yet"),
        Lookup::Unknown => error(StatusCode::NOT_FOUND, "unknown source"),
    }
}

#[derive(Debug, Deserialize)]
struct ForecastQuery {
    horizon: Option<u32>,
}

async fn forecast(State(reg): State<Shared>, Path(param): Path<String>, Query(q): Query<ForecastQuery>) -> Response {
    let cache = reg.forecasts.as_ref().expect("route registered with cache");
    if cache.is_empty() {
        return error(StatusCode::SERVICE_UNAVAILABLE, "forecast cache empty");
    }
    match cache.get(&param) {
        Some(series) => {
            let s = match q.horizon {
                Some(h) => series.truncated(h),
                None => (*series).clone(),
            };
            Json(ForecastDocument::from_series(&s)).into_response()
        }
        None => error(StatusCode::NOT_FOUND, "unknown parameter"),
    }
}

async fn tile_index(State(reg): State<Shared>) -> Response {
    let tiles = reg.tiles.as_ref().expect("route registered with tiles");
    Json(tiles.index_document()).into_response()
}

async fn tile(State(reg): State<Shared>, Path((row, col, kind)): Path<(String, String, String)>) -> Response {
    let tiles = reg.tiles.as_ref().expect("route registered with tiles");
    let (Ok(row), Ok(col), Some(kind)) = (row.parse::<usize>(), col.parse::<usize>(), TileKind::parse(&kind)) else {
        return error(StatusCode::NOT_FOUND, "no such tile");
    };
    match tiles.tile_bytes(row, col, kind) {
        Some(bytes) => ([(header::CONTENT_TYPE, "image/png")], bytes.to_vec()).into_response(),
        None => error(StatusCode::NOT_FOUND, "no such tile"),
    }
}
