use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_twinbridge"))
}

fn sample() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/sample")
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("spawn twinbridge")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_scene(dir: &Path) -> PathBuf {
    let scene = dir.join("scene");
    let o = run(bin().args(["gen-sample", "--size", "96", "-o"]).arg(&scene));
    assert!(o.status.success(), "{}", stderr(&o));
    scene
}

#[test]
fn terrain_build_on_sample() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("tiles");
    let s = sample();
    let o = run(bin()
        .args(["terrain", "build"])
        .arg(s.join("raster.asc"))
        .arg(s.join("contours.csv"))
        .arg("--color")
        .arg(s.join("color.png"))
        .arg("-o")
        .arg(&out));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("tiles: 4 (2 rows x 2 cols)"), "{}", stdout(&o));
    let pngs = std::fs::read_dir(&out)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png"))
        .count();
    assert_eq!(pngs, 8);
    assert!(out.join("index.txt").exists());
}

#[test]
fn terrain_build_missing_contours_is_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.csv");
    let o = run(bin()
        .args(["terrain", "build"])
        .arg(sample().join("raster.asc"))
        .arg(&missing)
        .arg("-o")
        .arg(tmp.path().join("out")));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.csv"), "{}", stderr(&o));
}

#[test]
fn terrain_build_rejects_unknown_normalization() {
    let tmp = tempfile::tempdir().unwrap();
    let s = sample();
    let o = run(bin()
        .args(["terrain", "build"])
        .arg(s.join("raster.asc"))
        .arg(s.join("contours.csv"))
        .args(["--normalization", "local", "-o"])
        .arg(tmp.path()));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn fetch_forecast_offline() {
    let tmp = tempfile::tempdir().unwrap();
    let fixture = tmp.path().join("one.ascii");
    let mut body = String::from("x_wind_10m, [61][1][1][1][1]\n");
    for i in 0..61 {
        body.push_str(&format!("[{i}][0][0][0], {}\n", i as f64 * 0.5));
    }
    std::fs::write(&fixture, body).unwrap();
    let o = run(bin()
        .args(["fetch-forecast", "--param", "x_wind_10m", "--y", "412", "--x", "337"])
        .args(["--at", "2024-01-15T13:30Z", "--offline-fixture"])
        .arg(&fixture));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    let mut lines = out.lines();
    let url = lines.next().unwrap();
    assert!(url.contains("_20240115T12Z.ncml.ascii?x_wind_10m%5B0:1:60%5D"), "{url}");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 61);
    assert!(rows[0].starts_with("0,"));
    assert_eq!(rows[60], "60,30");
}

#[test]
fn fetch_forecast_two_params_get_headers() {
    let o = run(bin()
        .args(["fetch-forecast", "--param", "x_wind_10m", "--param", "air_temperature_2m"])
        .args(["--y", "412", "--x", "337", "--offline-fixture"])
        .arg(sample().join("forecast_fixture.ascii")));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.lines().next().unwrap().contains("x_wind_10m%5B0:1:60%5D%5B0:1:0%5D%5B0:1:0%5D%5B412:1:412%5D%5B337:1:337%5D,air_temperature_2m"));
    assert_eq!(out.lines().filter(|l| l.starts_with("# ")).count(), 2);
    assert_eq!(out.lines().count(), 1 + 2 * 62);
}

#[test]
fn fetch_forecast_malformed_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.ascii");
    let mut body = String::from("x_wind_10m, [61][1][1][1][1]\n");
    for i in 0..30 {
        body.push_str(&format!("[{i}][0][0][0], 1.0\n"));
    }
    std::fs::write(&bad, body).unwrap();
    let o = run(bin().args(["fetch-forecast", "--param", "x_wind_10m", "--offline-fixture"]).arg(&bad));
    assert_ne!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("x_wind_10m"), "{}", stderr(&o));
}

#[test]
fn fetch_forecast_bad_timestamp() {
    let o = run(bin().args(["fetch-forecast", "--param", "x_wind_10m", "--at", "yesterday"]));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn duplicate_source_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = tmp.path().join("dup.conf");
    std::fs::write(
        &conf,
        format!(
            "port = 0\nsource.id = a\nsource.csv = {0}\nsource.id = a\nsource.csv = {0}\n",
            sample().join("telemetry.csv").display()
        ),
    )
    .unwrap();
    let o = run(bin().args(["serve", "--config"]).arg(&conf));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("duplicate"), "{}", stderr(&o));
}

#[test]
fn missing_config_is_input_error() {
    let o = run(bin().args(["verify", "--config", "/definitely/not/here.conf"]));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn verify_reports_corrupted_tile_and_keeps_going() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = small_scene(tmp.path());
    let tiles = tmp.path().join("tiles");
    let o = run(bin()
        .args(["terrain", "build"])
        .arg(scene.join("raster.asc"))
        .arg(scene.join("contours.csv"))
        .args(["--tile-size", "64", "-o"])
        .arg(&tiles));
    assert!(o.status.success(), "{}", stderr(&o));
    std::fs::write(tiles.join("tile_0_0_h.png"), b"not a png").unwrap();

    let conf = scene.join("verify.conf");
    let mut text = std::fs::read_to_string(&conf).unwrap();
    text.push_str(&format!("\nterrain.tile_dir = {}\n", tiles.display()));
    std::fs::write(&conf, text).unwrap();

    let o = run(bin().args(["verify", "--config"]).arg(&conf));
    let out = stdout(&o);
    assert_eq!(o.status.code(), Some(1), "{out}{}", stderr(&o));
    let row = |id: &str| out.lines().find(|l| l.split_whitespace().next() == Some(id)).unwrap_or_else(|| panic!("no row {id}:\n{out}")).to_string();
    assert!(row("5b").contains("FAIL"), "{out}");
    for id in ["1", "2", "3", "4", "5", "9"] {
        assert!(row(id).contains("PASS"), "check {id}:\n{out}");
    }
}

#[test]
fn serve_starts_and_answers() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = tmp.path().join("serve.conf");
    std::fs::write(
        &conf,
        format!(
            "port = 0\nsource.id = turbine1\nsource.csv = {}\nsource.speed = 100\n",
            sample().join("telemetry.csv").display()
        ),
    )
    .unwrap();
    let mut child = bin()
        .args(["serve", "--config"])
        .arg(&conf)
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut first = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut first).unwrap();
    let base = first.trim().strip_prefix("serving at ").expect(&first).trim_end_matches('/').to_string();

    let deadline = Instant::now() + Duration::from_secs(5);
    let body = loop {
        let r = reqwest::blocking::get(format!("{base}/snapshot/turbine1")).unwrap();
        if r.status() == 200 {
            break r.json::<serde_json::Value>().unwrap();
        }
        assert!(Instant::now() < deadline, "no snapshot within 5 s");
        std::thread::sleep(Duration::from_millis(20));
    };
    assert_eq!(body["source_id"], "turbine1");
    assert_eq!(reqwest::blocking::get(format!("{base}/health")).unwrap().status(), 200);
    child.kill().unwrap();
    child.wait().unwrap();
}

#[test]
fn serve_port_in_use_exits_1() {
    let holder = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = holder.local_addr().unwrap().port();
    let tmp = tempfile::tempdir().unwrap();
    let conf = tmp.path().join("c.conf");
    std::fs::write(&conf, format!("host = 127.0.0.1\nport = {port}\n")).unwrap();
    let o = run(bin().args(["serve", "--config"]).arg(&conf));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains(&port.to_string()), "{}", stderr(&o));
}

#[test]
fn poll_against_down_server_reports_failures() {
    let port = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let o = run(bin()
        .args(["poll", "--url", &format!("http://127.0.0.1:{port}/snapshot/x")])
        .args(["--period-ms", "100", "--duration-s", "0.35"]));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["successes"], 0);
    assert!(report["failures"].as_array().unwrap().len() >= 3, "{report}");
}

#[test]
fn gen_sample_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    for d in ["a", "b"] {
        let o = run(bin().args(["gen-sample", "--size", "64", "--seed", "7", "-o"]).arg(tmp.path().join(d)));
        assert!(o.status.success());
    }
    for f in ["raster.asc", "contours.csv", "color.png", "telemetry.csv", "forecast_fixture.ascii"] {
        assert_eq!(
            std::fs::read(tmp.path().join("a").join(f)).unwrap(),
            std::fs::read(tmp.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
}
