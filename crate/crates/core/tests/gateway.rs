use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{TimeZone, Utc};
use twinbridge::gateway::{
    serve, DocumentProvider, EndpointRegistry, ForecastCache, ForecastDocument, GatewayError, ServeConfig,
    SnapshotDocument, SnapshotStore, TileStore,
};
use twinbridge::metocean::{ForecastCycle, ForecastSeries};
use twinbridge::raster::{GridGeometry, MergedField};
use twinbridge::telemetry::TelemetryRecord;
use twinbridge::tiles::{slice, write_tileset, NormScope, SliceOptions, TileIndex};

fn rec(v: f64) -> TelemetryRecord {
    TelemetryRecord {
        source_id: "turbine1".into(),
        timestamp: Utc.with_ymd_and_hms(2024, 1, 15, 12, 0, 0).unwrap(),
        values: BTreeMap::from([("wind_speed".to_string(), v)]),
    }
}

fn local() -> ServeConfig {
    ServeConfig::new("127.0.0.1", 0)
}

#[tokio::test]
async fn health_and_unregistered_paths() {
    let h = serve(&local(), EndpointRegistry::builder().build().unwrap()).await.unwrap();
    let body: serde_json::Value = reqwest::get(h.url("/health")).await.unwrap().json().await.unwrap();
    assert_eq!(body, serde_json::json!({"status": "ok"}));
    for p in ["/", "/health/", "/snapshot/a", "/forecast/x", "/terrain/index", "/nope"] {
        assert_eq!(reqwest::get(h.url(p)).await.unwrap().status(), 404, "{p}");
    }
    h.shutdown().await.unwrap();
}

#[tokio::test]
async fn wildcard_bind_answers_health() {
    let h = serve(&ServeConfig::new("0.0.0.0", 0), EndpointRegistry::builder().build().unwrap())
        .await
        .unwrap();
    let text = reqwest::get(h.url("/health")).await.unwrap().text().await.unwrap();
    assert_eq!(text, r#"{"status":"ok"}"#);
    h.shutdown().await.unwrap();
}

#[tokio::test]
async fn snapshot_lifecycle() {
    let store = Arc::new(SnapshotStore::new());
    store.register("turbine1");
    let h = serve(&local(), EndpointRegistry::builder().snapshots(store.clone()).build().unwrap())
        .await
        .unwrap();
    let url = h.url("/snapshot/turbine1");
    assert_eq!(reqwest::get(&url).await.unwrap().status(), 503);
    assert_eq!(reqwest::get(h.url("/snapshot/nosuch")).await.unwrap().status(), 404);

    assert_eq!(store.publish("turbine1", rec(7.2)), 1);
    let resp = reqwest::get(&url).await.unwrap();
    assert_eq!(resp.status(), 200);
    assert_eq!(resp.headers()["content-type"], "application/json");
    let text = resp.text().await.unwrap();
    assert!(text.contains(r#""wind_speed":7.2"#), "{text}");
    assert!(text.contains(r#""sequence":1"#), "{text}");
    let doc: SnapshotDocument = serde_json::from_str(&text).unwrap();
    assert_eq!(doc.source_id, "turbine1");

    let eps: serde_json::Value = reqwest::get(h.url("/endpoints")).await.unwrap().json().await.unwrap();
    assert_eq!(eps["sources"], serde_json::json!(["turbine1"]));
    h.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn interleaved_publishes_and_http_reads() {
    let store = Arc::new(SnapshotStore::new());
    store.register("s");
    let h = serve(&local(), EndpointRegistry::builder().snapshots(store.clone()).build().unwrap())
        .await
        .unwrap();
    let writer = {
        let store = store.clone();
        std::thread::spawn(move || {
            for i in 0..100 {
                store.publish("s", rec(i as f64));
                std::thread::sleep(Duration::from_micros(500));
            }
        })
    };
    let client = reqwest::Client::new();
    let mut seqs = Vec::new();
    for _ in 0..100 {
        let r = client.get(h.url("/snapshot/s")).send().await.unwrap();
        if r.status() == 200 {
            let d: SnapshotDocument = r.json().await.unwrap();
            // value i carries sequence i + 1: a torn read would break this pairing
            assert_eq!(d.values["wind_speed"] as u64 + 1, d.sequence);
            seqs.push(d.sequence);
        }
    }
    writer.join().unwrap();
    assert!(seqs.iter().all(|s| (1..=100).contains(s)));
    assert!(seqs.windows(2).all(|w| w[0] <= w[1]), "{seqs:?}");
    h.shutdown().await.unwrap();
}

fn series() -> ForecastSeries {
    let cyc = ForecastCycle::new(2024, 1, 15, 12).unwrap();
    ForecastSeries::new("wind_speed_10m", cyc, (0..61).collect(), (0..61).map(|i| i as f64 * 0.5).collect(), "m/s")
        .unwrap()
}

#[tokio::test]
async fn forecast_endpoint() {
    let cache = Arc::new(ForecastCache::new());
    let h = serve(&local(), EndpointRegistry::builder().forecasts(cache.clone()).build().unwrap())
        .await
        .unwrap();
    assert_eq!(reqwest::get(h.url("/forecast/wind_speed_10m")).await.unwrap().status(), 503);
    cache.put(series());
    assert_eq!(reqwest::get(h.url("/forecast/rain")).await.unwrap().status(), 404);

    let doc: ForecastDocument = reqwest::get(h.url("/forecast/wind_speed_10m?horizon=12"))
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(doc.values.len(), 13);
    assert_eq!(doc.lead_hours, (0..=12).collect::<Vec<u32>>());
    assert_eq!(doc.cycle, "20240115T12Z");

    for q in ["?horizon=100", ""] {
        let doc: ForecastDocument = reqwest::get(h.url(&format!("/forecast/wind_speed_10m{q}")))
            .await
            .unwrap()
            .json()
            .await
            .unwrap();
        assert_eq!(doc.values.len(), 61);
    }
    h.shutdown().await.unwrap();
}

fn build_tiles(dir: &std::path::Path, with_color: bool) -> TileIndex {
    let g = GridGeometry::new(40, 30, 100.0, 200.0, 10.0).unwrap();
    let values: Vec<f64> = (0..g.len()).map(|i| (i % 17) as f64 - 5.0).collect();
    let field = MergedField::new(g, values).unwrap();
    let color = with_color.then(|| twinbridge::tiles::ColorImage {
        width: 40,
        height: 30,
        pixels: (0..g.len()).map(|i| [i as u8, 0, 255]).collect(),
    });
    let opts = SliceOptions {
        tile_size: 16,
        normalization: NormScope::Global,
    };
    let tiles = slice(&field, color.as_ref(), &opts).unwrap();
    let index = TileIndex::new(&g, 16, field.bounds(), NormScope::Global, &tiles);
    write_tileset(&tiles, &index, dir).unwrap();
    index
}

#[tokio::test]
async fn tile_endpoints_serve_disk_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let index = build_tiles(dir.path(), true);
    let store = Arc::new(TileStore::load(dir.path()).unwrap());
    let h = serve(&local(), EndpointRegistry::builder().tiles(store).build().unwrap())
        .await
        .unwrap();

    let resp = reqwest::get(h.url("/terrain/tile/0/0/height")).await.unwrap();
    assert_eq!(resp.headers()["content-type"], "image/png");
    let bytes = resp.bytes().await.unwrap();
    assert_eq!(&bytes[..], &std::fs::read(dir.path().join("tile_0_0_h.png")).unwrap()[..]);
    let bytes = reqwest::get(h.url("/terrain/tile/1/2/color")).await.unwrap().bytes().await.unwrap();
    assert_eq!(&bytes[..], &std::fs::read(dir.path().join("tile_1_2_c.png")).unwrap()[..]);

    for p in ["/terrain/tile/9/9/height", "/terrain/tile/0/0/normals", "/terrain/tile/-1/0/height", "/terrain/tile/0/0"] {
        assert_eq!(reqwest::get(h.url(p)).await.unwrap().status(), 404, "{p}");
    }

    let doc: serde_json::Value = reqwest::get(h.url("/terrain/index")).await.unwrap().json().await.unwrap();
    let on_disk = std::fs::read_dir(dir.path())
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().ends_with("_h.png"))
        .count();
    assert_eq!(doc["tiles"].as_array().unwrap().len(), on_disk);
    assert_eq!(on_disk, index.rows * index.cols);
    assert_eq!(doc["tile_size"], 16);
    h.shutdown().await.unwrap();
}

#[tokio::test]
async fn color_absent_is_404() {
    let dir = tempfile::tempdir().unwrap();
    build_tiles(dir.path(), false);
    let store = Arc::new(TileStore::load(dir.path()).unwrap());
    let h = serve(&local(), EndpointRegistry::builder().tiles(store).build().unwrap())
        .await
        .unwrap();
    assert_eq!(reqwest::get(h.url("/terrain/tile/0/0/height")).await.unwrap().status(), 200);
    assert_eq!(reqwest::get(h.url("/terrain/tile/0/0/color")).await.unwrap().status(), 404);
    h.shutdown().await.unwrap();
}

#[tokio::test]
async fn port_in_use_names_port() {
    let first = serve(&local(), EndpointRegistry::builder().build().unwrap()).await.unwrap();
    let port = first.local_addr().port();
    let err = serve(&ServeConfig::new("127.0.0.1", port), EndpointRegistry::builder().build().unwrap())
        .await
        .err()
        .expect("second bind must fail");
    assert!(matches!(err, GatewayError::Bind { .. }));
    assert!(err.to_string().contains(&port.to_string()), "{err}");
    first.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn shutdown_drains_in_flight_request() {
    let slow: Arc<dyn DocumentProvider> = Arc::new(|| {
        std::thread::sleep(Duration::from_millis(400));
        Ok(serde_json::json!({"slow": true}))
    });
    let h = serve(&local(), EndpointRegistry::builder().custom("/myendpoint", slow).build().unwrap())
        .await
        .unwrap();
    let url = h.url("/myendpoint");
    let health = h.url("/health");
    let req = tokio::spawn(async move { reqwest::get(url).await.unwrap().json::<serde_json::Value>().await.unwrap() });
    tokio::time::sleep(Duration::from_millis(100)).await;
    let t = Instant::now();
    h.shutdown().await.unwrap();
    // shutdown waited for the handler
    assert!(t.elapsed() >= Duration::from_millis(200), "{:?}", t.elapsed());
    assert_eq!(req.await.unwrap(), serde_json::json!({"slow": true}));
    // and the listener is closed afterwards
    assert!(reqwest::get(health).await.is_err());
}

#[tokio::test(flavor = "multi_thread")]
async fn poll_client_tracks_one_hertz_replay() {
    use twinbridge::gateway::StoreSink;
    use twinbridge::harness::poll_client;
    use twinbridge::telemetry::{spawn_replay, ReplaySchedule};

    let store = Arc::new(SnapshotStore::new());
    store.register("turbine1");
    let h = serve(&local(), EndpointRegistry::builder().snapshots(store.clone()).build().unwrap())
        .await
        .unwrap();
    let t0 = Utc.with_ymd_and_hms(2024, 1, 15, 12, 0, 0).unwrap();
    let records: Vec<TelemetryRecord> = (0..5)
        .map(|i| TelemetryRecord {
            timestamp: t0 + chrono::Duration::seconds(i),
            ..rec(i as f64)
        })
        .collect();
    let replay = spawn_replay(
        ReplaySchedule::new(records, 1.0, false).unwrap(),
        StoreSink::new(store.clone(), "turbine1"),
    );
    let report = poll_client(&h.url("/snapshot/turbine1"), Duration::from_millis(500), Duration::from_millis(4600)).await;
    let rep = tokio::task::spawn_blocking(move || replay.join()).await.unwrap().unwrap();
    h.shutdown().await.unwrap();

    assert_eq!(rep.delivered, 5);
    assert!(report.is_non_decreasing(), "{:?}", report.sequence_trace);
    assert!(report.distinct_sequences() >= 4, "{:?}", report.sequence_trace);
    assert!(report.polls >= 9, "{} polls", report.polls);
}
