//! End-to-end acceptance runner behind `twinbridge verify`.
//!
//! Every check runs even when an earlier one fails; a check that cannot run
//! because its inputs are missing counts as failed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use chrono::{TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gateway::{Lookup, SnapshotDocument, StoreSink};
use crate::metocean::{build_url, latest_cycle, ForecastCycle, ParamRequest, CYCLE_HOURS, HORIZON_SAMPLES};
use crate::raster::kdtree::{KdTree, Neighbor};
use crate::raster::{merge_bathymetry, GridGeometry, HeightField, MergedField, OceanMask};
use crate::telemetry::adapter::{conformance, DeliveryMode, MockStreamAdapter};
use crate::telemetry::{spawn_replay, RecordSink, ReplaySchedule, SinkError, TelemetryRecord};
use crate::tiles::{read_tileset, reassemble, slice, NormScope, SliceOptions, TileIndex};

use super::config::{Config, SourceKind};
use super::poll::{http_client, run_poll, PollPlan, PollReport};
use super::runtime::{load_fixture, load_source, start_gateway, LoadedSource};
use super::terrain::build_terrain;

/// Wall-clock budget for a whole verify run.
pub const VERIFY_BUDGET: Duration = Duration::from_secs(180);
/// Allowed relative error of replay wall time.
pub const REPLAY_TIMING_TOLERANCE: f64 = 0.10;
pub const ROUND_TRIP_LIMIT: Duration = Duration::from_millis(200);
pub const GOLDEN_URL: &str = "https://thredds.met.no/thredds/dodsC/mepslatest/meps_lagged_6_h_vc_2_5km_20240115T06Z.ncml.ascii?x_wind_10m%5B0:1:60%5D%5B0:1:0%5D%5B0:1:0%5D%5B100:1:100%5D%5B200:1:200%5D";

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub id: &'static str,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub checks: Vec<CheckOutcome>,
    pub total: Duration,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn table(&self) -> String {
        let w = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(5);
        let mut s = String::new();
        writeln!(s, "{:>5}  {:<w$}  {:<6}  {:>8}  detail", "#", "check", "result", "time").unwrap();
        for c in &self.checks {
            writeln!(
                s,
                "{:>5}  {:<w$}  {:<6}  {:>7.2}s  {}",
                c.id,
                c.name,
                if c.passed { "PASS" } else { "FAIL" },
                c.elapsed.as_secs_f64(),
                c.detail
            )
            .unwrap();
        }
        let n_pass = self.checks.iter().filter(|c| c.passed).count();
        write!(
            s,
            "{n_pass}/{} checks passed in {:.2}s",
            self.checks.len(),
            self.total.as_secs_f64()
        )
        .unwrap();
        s
    }
}

#[derive(Debug, Clone, Default)]
pub struct VerifyOptions {
    /// Where terrain builds go; a fresh temporary directory when `None`.
    pub work_dir: Option<PathBuf>,
    /// Keep the work directory afterwards.
    pub keep: bool,
}

type CheckResult = Result<String, String>;

fn timed<F: FnOnce() -> CheckResult>(id: &'static str, name: &'static str, f: F) -> CheckOutcome {
    let t = Instant::now();
    let r = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .map_or("panicked".into(), |m| format!("panicked: {m}")))
    });
    outcome(id, name, r, t.elapsed())
}

fn outcome(id: &'static str, name: &'static str, r: CheckResult, elapsed: Duration) -> CheckOutcome {
    let (passed, detail) = match r {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    CheckOutcome {
        id,
        name,
        passed,
        detail,
        elapsed,
    }
}

/// Fixture series have leads `0..=60`; every cycle chosen over three days
/// falls on a model run hour and its URL says so.
pub fn check_forecast_constants(config: &Config) -> CheckResult {
    let fc = config.forecast.as_ref().ok_or("no forecast configured")?;
    let path = fc.fixture.as_ref().ok_or("no forecast fixture configured")?;
    let series = load_fixture(fc, path).map_err(|e| e.to_string())?;
    let want: Vec<u32> = (0..HORIZON_SAMPLES as u32).collect();
    for s in &series {
        if s.lead_hours != want {
            return Err(format!("`{}` has {} leads, want 0..=60", s.param, s.lead_hours.len()));
        }
    }
    let req = ParamRequest::point_series("x_wind_10m", 0, 0).map_err(|e| e.to_string())?;
    let t0 = Utc.with_ymd_and_hms(2024, 1, 14, 0, 0, 0).unwrap();
    let mut cycles = 0;
    for step in 0..(3 * 24 * 60 / 7) {
        let now = t0 + chrono::Duration::minutes(7 * step);
        for delay in [Duration::ZERO, fc.publication_delay] {
            let c = latest_cycle(now, delay);
            if !CYCLE_HOURS.contains(&c.hour()) {
                return Err(format!("cycle hour {} at {now}", c.hour()));
            }
            let url = build_url(&c, std::slice::from_ref(&req)).map_err(|e| e.to_string())?;
            if !url.contains(&format!("T{:02}Z.ncml.ascii?", c.hour())) {
                return Err(format!("url {url} lacks cycle hour"));
            }
            cycles += 1;
        }
    }
    Ok(format!(
        "{} series x 61 leads; {cycles} cycle choices all on 00/06/12/18",
        series.len()
    ))
}

pub fn check_url_golden() -> CheckResult {
    let cycle = ForecastCycle::new(2024, 1, 15, 6).map_err(|e| e.to_string())?;
    let req = ParamRequest::point_series("x_wind_10m", 100, 200).map_err(|e| e.to_string())?;
    let url = build_url(&cycle, &[req]).map_err(|e| e.to_string())?;
    if url == GOLDEN_URL {
        Ok(format!("{} bytes match", url.len()))
    } else {
        Err(format!("got {url}"))
    }
}

fn brute_force(points: &[[f64; 2]], q: [f64; 2], k: usize) -> Vec<Neighbor> {
    let mut all: Vec<Neighbor> = points
        .iter()
        .enumerate()
        .map(|(index, p)| Neighbor {
            index,
            dist2: (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2),
        })
        .collect();
    all.sort_by(|a, b| a.dist2.total_cmp(&b.dist2).then(a.index.cmp(&b.index)));
    all.truncate(k);
    all
}

/// k-d tree answers equal a linear scan, ties broken by insertion index.
pub fn check_knn_oracle(sets: usize, max_points: usize, queries: usize, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for set in 0..sets {
        let n = rng.random_range(1..=max_points);
        // every other set sits on an integer lattice to force distance ties
        let lattice = set % 2 == 1;
        let points: Vec<[f64; 2]> = (0..n)
            .map(|_| {
                if lattice {
                    [rng.random_range(0..20) as f64, rng.random_range(0..20) as f64]
                } else {
                    [rng.random_range(-1e3..1e3), rng.random_range(-1e3..1e3)]
                }
            })
            .collect();
        let tree = KdTree::build(&points);
        for _ in 0..queries {
            let q = if lattice {
                [rng.random_range(-2..22) as f64, rng.random_range(-2..22) as f64]
            } else {
                [rng.random_range(-1.2e3..1.2e3), rng.random_range(-1.2e3..1.2e3)]
            };
            let k = rng.random_range(1..=16);
            let got = tree.nearest(q[0], q[1], k);
            let want = brute_force(&points, q, k);
            if got != want {
                return Err(format!("set {set} ({n} points) query {q:?} k={k} differs"));
            }
        }
    }
    Ok(format!("{sets} sets x {queries} queries identical"))
}

/// Slice/reassemble stays within one quantization step; merging with an
/// empty ocean mask changes nothing.
pub fn check_terrain_roundtrip(width: usize, height: usize) -> CheckResult {
    let g = GridGeometry::new(width, height, 1000.0, 2000.0, 5.0).map_err(|e| e.to_string())?;
    let values: Vec<f64> = (0..g.len())
        .map(|i| {
            let (r, c) = ((i / width) as f64, (i % width) as f64);
            40.0 * (r / 17.0).sin() * (c / 23.0).cos() + 0.05 * r - 12.5
        })
        .collect();
    let field = MergedField::new(g, values.clone()).map_err(|e| e.to_string())?;
    let (lo, hi) = field.bounds();
    let step = (hi - lo) / 65535.0;
    for ts in [64, 256] {
        let opts = SliceOptions {
            tile_size: ts,
            normalization: NormScope::Global,
        };
        let tiles = slice(&field, None, &opts).map_err(|e| e.to_string())?;
        let index = TileIndex::new(&g, ts, (lo, hi), NormScope::Global, &tiles);
        let back = reassemble(&tiles, &index).map_err(|e| e.to_string())?;
        let worst = back
            .values
            .iter()
            .zip(&values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if worst > step {
            return Err(format!("tile size {ts}: error {worst} exceeds step {step}"));
        }
    }
    let hf = HeightField::new(g, values.clone(), -9999.0).map_err(|e| e.to_string())?;
    let merged = merge_bathymetry(&hf, &OceanMask::empty(width, height), None, 0.0).map_err(|e| e.to_string())?;
    if merged.values != values {
        return Err("merge with empty mask altered the field".into());
    }
    Ok(format!("{width}x{height}: max error within {step:.3e}; empty-mask merge is identity"))
}

fn dir_files(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    for e in std::fs::read_dir(dir).map_err(|e| format!("{}: {e}", dir.display()))? {
        let e = e.map_err(|e| e.to_string())?;
        let bytes = std::fs::read(e.path()).map_err(|err| format!("{}: {err}", e.path().display()))?;
        out.insert(e.file_name().to_string_lossy().into_owned(), bytes);
    }
    Ok(out)
}

/// Two builds of the configured scene are byte-identical.
pub fn check_determinism(config: &Config, work: &Path) -> CheckResult {
    let job = config.terrain.as_ref().ok_or("no terrain inputs configured")?;
    let (a, b) = (work.join("build_a"), work.join("build_b"));
    let s = build_terrain(job, &a).map_err(|e| e.to_string())?;
    build_terrain(job, &b).map_err(|e| e.to_string())?;
    let (fa, fb) = (dir_files(&a)?, dir_files(&b)?);
    if fa.keys().ne(fb.keys()) {
        return Err("builds produced different file sets".into());
    }
    if let Some(name) = fa.keys().find(|k| fa[*k] != fb[*k]) {
        return Err(format!("{name} differs between builds"));
    }
    Ok(format!("{} tiles, {} files identical", s.tiles, fa.len()))
}

/// Every listed tile decodes and matches the index geometry.
pub fn check_tileset(dir: &Path) -> CheckResult {
    let (index, tiles) = read_tileset(dir).map_err(|e| e.to_string())?;
    if tiles.len() != index.rows * index.cols {
        return Err(format!("{} tiles for a {}x{} index", tiles.len(), index.rows, index.cols));
    }
    reassemble(&tiles, &index).map_err(|e| e.to_string())?;
    Ok(format!("{} tiles decode in {}", tiles.len(), dir.display()))
}

pub fn check_adapter_conformance(sources: &[LoadedSource]) -> CheckResult {
    let mut cases: Vec<(String, String, Vec<TelemetryRecord>)> = sources
        .iter()
        .filter_map(|s| match &s.config.kind {
            SourceKind::Mock { credential, .. } => Some((s.config.id.clone(), credential.clone(), s.records.clone())),
            SourceKind::Csv { .. } => None,
        })
        .collect();
    if cases.is_empty() {
        // no mock source configured: exercise the contract on the first archive
        let s = sources.first().ok_or("no sources configured")?;
        cases.push((s.config.id.clone(), "verify-credential".into(), s.records.clone()));
    }
    let mut names = Vec::new();
    for (id, cred, script) in cases {
        let n = script.len();
        let report = conformance::run(
            || MockStreamAdapter::new(cred.clone(), script.clone(), DeliveryMode::Burst),
            &cred,
            &format!("{cred}-wrong"),
            Some(n),
        );
        if let Some(f) = report.failures().first() {
            return Err(format!("{id}: {} ({})", f.name, f.outcome.clone().unwrap_err()));
        }
        names.push(format!("{id} {}/{}", report.checks.len(), report.checks.len()));
    }
    Ok(names.join(", "))
}

struct Recording {
    inner: StoreSink,
    log: Arc<Mutex<Vec<TelemetryRecord>>>,
}

impl RecordSink for Recording {
    fn accept(&mut self, record: TelemetryRecord) -> Result<(), SinkError> {
        self.log.lock().unwrap().push(record.clone());
        self.inner.accept(record)
    }
}

/// Runs the whole suite against `config`.
pub async fn run_verify(config: &Config, opts: &VerifyOptions) -> VerifyReport {
    let start = Instant::now();
    let (work, remove_work) = match &opts.work_dir {
        Some(d) => (d.clone(), false),
        None => {
            let nanos = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_nanos());
            (
                std::env::temp_dir().join(format!("twinbridge-verify-{}-{nanos}", std::process::id())),
                !opts.keep,
            )
        }
    };
    let _ = std::fs::create_dir_all(&work);
    let mut checks = Vec::new();

    let cpu = {
        let config = config.clone();
        let work = work.clone();
        tokio::task::spawn_blocking(move || {
            vec![
                timed("1", "forecast constants", || check_forecast_constants(&config)),
                timed("2", "url golden", check_url_golden),
                timed("3", "knn oracle", || check_knn_oracle(100, 2000, 50, 0x5eed)),
                timed("4", "terrain round-trip", || check_terrain_roundtrip(300, 200)),
                timed("5", "pipeline determinism", || check_determinism(&config, &work)),
            ]
        })
    };
    checks.extend(cpu.await.unwrap_or_default());

    let tile_dir = config.tile_dir.clone().unwrap_or_else(|| work.join("build_a"));
    let tile_check = {
        let d = tile_dir.clone();
        tokio::task::spawn_blocking(move || timed("5b", "terrain tiles", || check_tileset(&d)))
            .await
            .expect("tile check")
    };
    let tiles_ok = tile_check.passed;
    let tile_check_pos = checks.len();
    checks.push(tile_check);

    let t = Instant::now();
    let sources: Result<Vec<LoadedSource>, String> =
        config.sources.iter().map(|s| load_source(s).map_err(|e| e.to_string())).collect();

    let mut gw_config = config.clone();
    gw_config.tile_dir = tiles_ok.then_some(tile_dir);
    if gw_config.forecast.as_ref().is_some_and(|f| {
        f.fixture
            .as_ref()
            .is_none_or(|p| load_fixture(f, p).is_err())
    }) {
        gw_config.forecast = None;
    }
    // replays are driven here, not by the gateway
    gw_config.sources.clear();
    let gateway = start_gateway(&gw_config).await.map_err(|e| e.to_string());
    let setup_elapsed = t.elapsed();

    match (&gateway, &sources) {
        (Ok(gw), Ok(sources)) => {
            if tiles_ok {
                let served = check_served_tiles(gw, &config.tile_dir.clone().unwrap_or_else(|| work.join("build_a"))).await;
                if let Err(e) = served {
                    let c = &mut checks[tile_check_pos];
                    c.passed = false;
                    c.detail = format!("served index: {e}");
                }
            }
            let t = Instant::now();
            let r = check_round_trip(gw).await;
            checks.push(outcome("6", "real-time round-trip", r, t.elapsed() + setup_elapsed));

            let t = Instant::now();
            let (multi, timing) = check_replay_and_clients(config, gw, sources).await;
            let e = t.elapsed();
            checks.push(outcome("7", "multi-client consistency", multi, e));
            checks.push(outcome("8", "replay timing", timing, e));
        }
        (g, s) => {
            let why = match (g, s) {
                (Err(e), _) | (_, Err(e)) => e.clone(),
                _ => unreachable!(),
            };
            checks.push(outcome("6", "real-time round-trip", Err(why.clone()), setup_elapsed));
            checks.push(outcome("7", "multi-client consistency", Err(why.clone()), Duration::ZERO));
            checks.push(outcome("8", "replay timing", Err(why), Duration::ZERO));
        }
    }

    let t = Instant::now();
    let r = match &sources {
        Ok(s) => check_adapter_conformance(s),
        Err(e) => Err(e.clone()),
    };
    checks.push(outcome("9", "adapter conformance", r, t.elapsed()));

    if let Ok(gw) = gateway {
        if let Err(e) = gw.shutdown().await {
            tracing::warn!("gateway shutdown: {e}");
        }
    }
    if remove_work {
        let _ = std::fs::remove_dir_all(&work);
    }

    let total = start.elapsed();
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.id).collect();
    let r = if !failed.is_empty() {
        Err(format!("failed: {}", failed.join(", ")))
    } else if total >= VERIFY_BUDGET {
        Err(format!("took {:.1}s, budget {}s", total.as_secs_f64(), VERIFY_BUDGET.as_secs()))
    } else {
        Ok(format!("all checks passed within {}s budget", VERIFY_BUDGET.as_secs()))
    };
    checks.push(outcome("10", "end-to-end verify", r, total));
    VerifyReport { checks, total }
}

async fn check_served_tiles(gw: &super::runtime::RunningGateway, dir: &Path) -> Result<(), String> {
    let client = http_client();
    let doc: serde_json::Value = client
        .get(gw.server.url("/terrain/index"))
        .send()
        .await
        .map_err(|e| e.to_string())?
        .json()
        .await
        .map_err(|e| e.to_string())?;
    let listed = doc["tiles"].as_array().map_or(0, Vec::len);
    let on_disk = std::fs::read_dir(dir)
        .map_err(|e| e.to_string())?
        .filter_map(Result::ok)
        .filter(|e| e.file_name().to_string_lossy().ends_with("_h.png"))
        .count();
    if listed != on_disk {
        return Err(format!("index lists {listed} tiles, {on_disk} on disk"));
    }
    let bytes = client
        .get(gw.server.url("/terrain/tile/0/0/height"))
        .send()
        .await
        .map_err(|e| e.to_string())?
        .bytes()
        .await
        .map_err(|e| e.to_string())?;
    let disk = std::fs::read(dir.join("tile_0_0_h.png")).map_err(|e| e.to_string())?;
    if bytes[..] != disk[..] {
        return Err("tile (0,0) bytes differ from disk".into());
    }
    Ok(())
}

const PROBE_SOURCE: &str = "verify-probe";

async fn check_round_trip(gw: &super::runtime::RunningGateway) -> CheckResult {
    gw.store.register(PROBE_SOURCE);
    let url = gw.server.url(&format!("/snapshot/{PROBE_SOURCE}"));
    let poller = tokio::spawn(async move {
        run_poll(&http_client(), &url, PollPlan::timed(Duration::from_millis(10), Duration::from_millis(1500))).await
    });
    tokio::time::sleep(Duration::from_millis(100)).await;
    let rec = TelemetryRecord {
        source_id: PROBE_SOURCE.into(),
        timestamp: Utc::now(),
        values: BTreeMap::from([("wind_speed".to_string(), 7.2)]),
    };
    let published = Instant::now();
    let seq = gw.store.publish(PROBE_SOURCE, rec);
    let report = poller.await.map_err(|e| e.to_string())?;
    if seq != 1 {
        return Err(format!("first publish returned sequence {seq}"));
    }
    let doc = report.last_document.as_ref().ok_or("client received nothing")?;
    if doc.values.get("wind_speed") != Some(&7.2) || doc.sequence != 1 {
        return Err(format!("client saw {doc:?}"));
    }
    let seen_ms = *report.first_seen_ms.get(&1).ok_or("sequence 1 never observed")?;
    let seen = report.started.unwrap() + Duration::from_secs_f64(seen_ms / 1e3);
    let latency = seen.saturating_duration_since(published);
    if latency > ROUND_TRIP_LIMIT {
        return Err(format!("observed after {} ms", latency.as_millis()));
    }
    Ok(format!("wind_speed 7.2, sequence 1 seen after {:.1} ms", latency.as_secs_f64() * 1e3))
}

async fn check_replay_and_clients(
    config: &Config,
    gw: &super::runtime::RunningGateway,
    sources: &[LoadedSource],
) -> (CheckResult, CheckResult) {
    let csv: Vec<&LoadedSource> = sources
        .iter()
        .filter(|s| matches!(s.config.kind, SourceKind::Csv { .. }))
        .collect();
    if csv.is_empty() {
        let e = Err("no CSV sources configured".to_string());
        return (e.clone(), e);
    }
    let mut schedules = Vec::new();
    for s in &csv {
        // verify replays each archive once, even if the source loops when served
        match ReplaySchedule::new(s.records.clone(), s.config.speed, false) {
            Ok(sc) => schedules.push((s.config.id.clone(), sc)),
            Err(e) => {
                let e = Err(format!("{}: {e}", s.config.id));
                return (e.clone(), e);
            }
        }
    }
    let longest = schedules.iter().map(|(_, s)| s.expected_duration()).max().unwrap();
    let settle = config.poll_period * 4 + Duration::from_millis(500);
    let poll_for = longest + settle;

    for (id, _) in &schedules {
        gw.store.register(id);
    }
    let client = http_client();
    let mut pollers = Vec::new();
    for c in 0..config.poll_clients {
        for (id, _) in &schedules {
            let url = gw.server.url(&format!("/snapshot/{id}"));
            let client = client.clone();
            let plan = PollPlan::timed(config.poll_period, poll_for);
            let id = id.clone();
            pollers.push(tokio::spawn(async move { (c, id, run_poll(&client, &url, plan).await) }));
        }
    }

    let mut replays = Vec::new();
    for (id, sc) in &schedules {
        let log = Arc::new(Mutex::new(Vec::new()));
        let sink = Recording {
            inner: StoreSink::new(gw.store.clone(), id),
            log: log.clone(),
        };
        replays.push((id.clone(), sc.clone(), log, spawn_replay(sc.clone(), sink)));
    }

    let mut timing = Vec::new();
    let mut timing_err = None;
    for (id, sc, log, handle) in replays {
        let report = tokio::task::spawn_blocking(move || handle.join()).await.expect("join replay");
        let report = match report {
            Ok(r) => r,
            Err(e) => {
                timing_err.get_or_insert(format!("{id}: {e}"));
                continue;
            }
        };
        let expected = sc.expected_duration().as_secs_f64();
        let got = report.elapsed.as_secs_f64();
        let delivered = log.lock().unwrap().clone();
        let final_seq = match gw.store.get(&id) {
            Lookup::Found(s) => s.sequence,
            _ => 0,
        };
        let in_order = delivered.iter().map(|r| (&r.timestamp, &r.values)).eq(sc.records().iter().map(|r| (&r.timestamp, &r.values)));
        let err = if report.delivered != sc.records().len() || final_seq != sc.records().len() as u64 {
            Some(format!("{id}: delivered {} of {}, final sequence {final_seq}", report.delivered, sc.records().len()))
        } else if !in_order {
            Some(format!("{id}: delivery order differs from the archive"))
        } else if (got - expected).abs() > REPLAY_TIMING_TOLERANCE * expected.max(1e-3) {
            Some(format!("{id}: {got:.3}s for expected {expected:.3}s"))
        } else {
            None
        };
        if let Some(e) = err {
            timing_err.get_or_insert(e);
        }
        timing.push(format!(
            "{id}: {} records over {:.1}s at x{} in {got:.3}s (expected {expected:.3}s)",
            sc.records().len(),
            sc.span().num_milliseconds() as f64 / 1e3,
            sc.speed()
        ));
    }
    let timing_result = match timing_err {
        Some(e) => Err(e),
        None => Ok(timing.join("; ")),
    };

    let mut by_source: BTreeMap<String, Vec<(usize, PollReport)>> = BTreeMap::new();
    for p in pollers {
        match p.await {
            Ok((c, id, r)) => by_source.entry(id).or_default().push((c, r)),
            Err(e) => return (Err(format!("poll task: {e}")), timing_result),
        }
    }
    let mut details = Vec::new();
    for (id, reports) in &by_source {
        let truth = match gw.store.get(id) {
            Lookup::Found(s) => s.document(),
            _ => return (Err(format!("{id}: no snapshot after replay")), timing_result),
        };
        let key = |d: &SnapshotDocument| (d.sequence, d.values.clone());
        for (c, r) in reports {
            if !r.is_non_decreasing() {
                return (Err(format!("{id}: client {c} saw a decreasing sequence")), timing_result);
            }
            match &r.last_document {
                Some(d) if key(d) == key(&truth) => {}
                Some(d) => {
                    return (
                        Err(format!("{id}: client {c} ended at sequence {}, server at {}", d.sequence, truth.sequence)),
                        timing_result,
                    )
                }
                None => return (Err(format!("{id}: client {c} received nothing")), timing_result),
            }
        }
        let polls: usize = reports.iter().map(|(_, r)| r.successes).sum();
        details.push(format!(
            "{id}: {} clients agree on sequence {} ({polls} polls)",
            reports.len(),
            truth.sequence
        ));
    }
    (Ok(details.join("; ")), timing_result)
}
