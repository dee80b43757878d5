//! Synthetic sample scene: an island with surrounding bathymetry, a turbine
//! telemetry archive, a buoy stream script, a forecast fixture and configs.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use chrono::{TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::metocean::{latest_cycle, to_ascii, ForecastSeries, ParamRequest, HORIZON_SAMPLES};
use crate::raster::{write_ascii_grid, GridGeometry, HeightField};
use crate::tiles::{encode_color_image, ColorImage};

pub const DEFAULT_SAMPLE_SIZE: usize = 512;
pub const DEFAULT_SEED: u64 = 20240115;
pub const SAMPLE_CELL_SIZE: f64 = 10.0;
pub const SAMPLE_ORIGIN: (f64, f64) = (400_000.0, 7_000_000.0);
pub const SAMPLE_TELEMETRY_RECORDS: usize = 100;
/// Archive span of the sample telemetry in milliseconds.
pub const SAMPLE_TELEMETRY_SPAN_MS: i64 = 10_000;
pub const SAMPLE_CREDENTIAL: &str = "sample-token";
pub const SAMPLE_FORECAST_POINT: (u32, u32) = (412, 337);
pub const SAMPLE_FORECAST_PARAMS: [&str; 2] = ["x_wind_10m", "air_temperature_2m"];
const CONTOUR_DEPTHS: [f64; 4] = [5.0, 10.0, 20.0, 30.0];
const CONTOUR_RAYS: usize = 360;
const NODATA: f64 = -9999.0;

#[derive(Debug, Clone, Copy)]
struct Surface {
    phase: [f64; 3],
    center: (f64, f64),
}

impl Surface {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        Self {
            phase: [rng.random::<f64>() * TAU, rng.random::<f64>() * TAU, rng.random::<f64>() * TAU],
            center: (0.5 + rng.random_range(-0.03..0.03), 0.5 + rng.random_range(-0.03..0.03)),
        }
    }

    /// Elevation in meters at unit-square coordinates.
    fn z(&self, u: f64, v: f64) -> f64 {
        let (du, dv) = (u - self.center.0, v - self.center.1);
        let r2 = du * du + dv * dv;
        let bump = 110.0 * (-r2 / 0.0648).exp() - 35.0;
        let ripple = 3.0 * (7.0 * TAU * u + self.phase[0]).sin() * (5.0 * TAU * v + self.phase[1]).cos()
            + 1.5 * (13.0 * TAU * (u + v) + self.phase[2]).sin();
        bump + ripple
    }
}

fn write_file(dir: &Path, name: &str, bytes: &[u8], out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    let p = dir.join(name);
    fs::write(&p, bytes)?;
    out.push(p);
    Ok(())
}

/// Writes the sample dataset into `dir` with a `size x size` raster.
pub fn generate_sample(dir: &Path, size: usize, seed: u64) -> std::io::Result<Vec<PathBuf>> {
    assert!(size >= 16, "sample raster must be at least 16 cells wide");
    fs::create_dir_all(dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let surf = Surface::new(&mut rng);
    let mut files = Vec::new();
    let n = size as f64;

    let geom = GridGeometry::new(size, size, SAMPLE_ORIGIN.0, SAMPLE_ORIGIN.1, SAMPLE_CELL_SIZE).unwrap();
    let mut heights = Vec::with_capacity(geom.len());
    let mut pixels = Vec::with_capacity(geom.len());
    let nodata_edge = size / 25;
    for r in 0..size {
        for c in 0..size {
            let (u, v) = ((c as f64 + 0.5) / n, (r as f64 + 0.5) / n);
            let z = surf.z(u, v);
            pixels.push(shade(z));
            heights.push(if r < nodata_edge && c < nodata_edge {
                NODATA
            } else if z > 0.0 {
                (z * 10.0).round() / 10.0
            } else {
                0.0
            });
        }
    }
    let field = HeightField::new(geom, heights, NODATA).unwrap();
    let p = dir.join("raster.asc");
    write_ascii_grid(&field, BufWriter::new(fs::File::create(&p)?))?;
    files.push(p);

    let png = encode_color_image(&ColorImage {
        width: size,
        height: size,
        pixels,
    })
    .map_err(std::io::Error::other)?;
    write_file(dir, "color.png", &png, &mut files)?;

    let extent = n * SAMPLE_CELL_SIZE;
    let mut csv = String::from("x,y,depth\n");
    for depth in CONTOUR_DEPTHS {
        for k in 0..CONTOUR_RAYS {
            let a = k as f64 / CONTOUR_RAYS as f64 * TAU;
            let Some(t) = crossing(&surf, a, -depth) else { continue };
            let (u, v) = (surf.center.0 + t * a.cos(), surf.center.1 + t * a.sin());
            writeln!(
                csv,
                "{:.2},{:.2},{:.1}",
                SAMPLE_ORIGIN.0 - SAMPLE_CELL_SIZE / 2.0 + u * extent,
                SAMPLE_ORIGIN.1 - SAMPLE_CELL_SIZE / 2.0 + v * extent,
                depth
            )
            .unwrap();
        }
    }
    write_file(dir, "contours.csv", csv.as_bytes(), &mut files)?;

    write_file(dir, "telemetry.csv", turbine_csv(&mut rng).as_bytes(), &mut files)?;
    write_file(dir, "buoy.csv", buoy_csv(&mut rng).as_bytes(), &mut files)?;
    write_file(dir, "forecast_fixture.ascii", forecast_fixture(&mut rng).as_bytes(), &mut files)?;

    let mut manifest = String::from("# asset_id x y z yaw model_ref\n");
    for (i, (u, v)) in [(0.22, 0.31), (0.18, 0.52), (0.24, 0.73)].iter().enumerate() {
        writeln!(
            manifest,
            "turbine{} {:.1} {:.1} 0.0 {:.1} turbine_15mw",
            i + 1,
            SAMPLE_ORIGIN.0 + u * extent,
            SAMPLE_ORIGIN.1 + v * extent,
            rng.random_range(0.0..360.0f64)
        )
        .unwrap();
    }
    writeln!(
        manifest,
        "buoy1 {:.1} {:.1} 0.0 0.0 wave_buoy",
        SAMPLE_ORIGIN.0 + 0.85 * extent,
        SAMPLE_ORIGIN.1 + 0.15 * extent
    )
    .unwrap();
    write_file(dir, "manifest.txt", manifest.as_bytes(), &mut files)?;

    write_file(dir, "verify.conf", config_text(true).as_bytes(), &mut files)?;
    write_file(dir, "serve.conf", config_text(false).as_bytes(), &mut files)?;
    Ok(files)
}

/// Distance along the ray at angle `a` where the surface first drops to `level`.
fn crossing(surf: &Surface, a: f64, level: f64) -> Option<f64> {
    let at = |t: f64| surf.z(surf.center.0 + t * a.cos(), surf.center.1 + t * a.sin());
    let step = 0.002;
    let mut t = 0.0;
    while t < 0.5 {
        let next = t + step;
        if at(t) > level && at(next) <= level {
            let (mut lo, mut hi) = (t, next);
            for _ in 0..40 {
                let mid = 0.5 * (lo + hi);
                if at(mid) > level {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return Some(0.5 * (lo + hi));
        }
        t = next;
    }
    None
}

fn shade(z: f64) -> [u8; 3] {
    let lerp = |a: [f64; 3], b: [f64; 3], t: f64| {
        let t = t.clamp(0.0, 1.0);
        [0, 1, 2].map(|i| (a[i] + (b[i] - a[i]) * t).round() as u8)
    };
    if z <= 0.0 {
        lerp([70.0, 150.0, 200.0], [10.0, 40.0, 110.0], -z / 40.0)
    } else if z < 40.0 {
        lerp([200.0, 190.0, 140.0], [70.0, 140.0, 60.0], z / 40.0)
    } else {
        lerp([70.0, 140.0, 60.0], [150.0, 140.0, 130.0], (z - 40.0) / 60.0)
    }
}

fn stamp_ms(ms: i64) -> String {
    let t0 = Utc.with_ymd_and_hms(2024, 1, 15, 12, 0, 0).unwrap();
    (t0 + chrono::Duration::milliseconds(ms))
        .format("%Y-%m-%dT%H:%M:%S%.3fZ")
        .to_string()
}

fn turbine_csv(rng: &mut ChaCha8Rng) -> String {
    let mut s = String::from("timestamp,wind_speed,rotor_rpm,power_kw,nacelle_yaw\n");
    let mut wind = 7.2;
    let mut yaw: f64 = 265.0;
    let last = (SAMPLE_TELEMETRY_RECORDS - 1) as i64;
    for i in 0..SAMPLE_TELEMETRY_RECORDS as i64 {
        // span is exactly SAMPLE_TELEMETRY_SPAN_MS with near-uniform gaps
        let ms = (i * SAMPLE_TELEMETRY_SPAN_MS + last / 2) / last;
        if i > 0 {
            wind = (wind + rng.random_range(-0.3..0.3f64)).clamp(3.0, 24.0);
            yaw = (yaw + rng.random_range(-1.0..1.0)).rem_euclid(360.0);
        }
        let rpm = (wind * 1.05).min(7.5);
        let power = (15000.0 * ((wind - 3.0) / 8.0).clamp(0.0, 1.0).powi(3)).min(15000.0);
        writeln!(s, "{},{wind:.2},{rpm:.2},{power:.1},{yaw:.1}", stamp_ms(ms)).unwrap();
    }
    s
}

fn buoy_csv(rng: &mut ChaCha8Rng) -> String {
    let mut s = String::from("timestamp,wave_height,wave_period,water_temp\n");
    let mut hs = 1.8;
    for i in 0..40 {
        hs = (hs + rng.random_range(-0.05..0.05f64)).max(0.2);
        let tp = 7.5 + rng.random_range(-0.4..0.4f64);
        writeln!(s, "{},{hs:.2},{tp:.2},{:.2}", stamp_ms(i * 250), 6.1 + 0.01 * i as f64).unwrap();
    }
    s
}

fn forecast_fixture(rng: &mut ChaCha8Rng) -> String {
    let cycle = latest_cycle(Utc.with_ymd_and_hms(2024, 1, 15, 13, 30, 0).unwrap(), std::time::Duration::ZERO);
    let leads: Vec<u32> = (0..HORIZON_SAMPLES as u32).collect();
    let mut series = Vec::new();
    let mut reqs = Vec::new();
    for (param, base, amp, units) in [
        (SAMPLE_FORECAST_PARAMS[0], 6.0, 3.0, "m/s"),
        (SAMPLE_FORECAST_PARAMS[1], 271.5, 2.5, "K"),
    ] {
        let phase = rng.random::<f64>() * TAU;
        let values: Vec<f64> = leads
            .iter()
            .map(|&h| ((base + amp * (h as f64 / 24.0 * TAU + phase).sin()) * 1000.0).round() / 1000.0)
            .collect();
        series.push(ForecastSeries::new(param, cycle, leads.clone(), values, units).unwrap());
        reqs.push(ParamRequest::point_series(param, SAMPLE_FORECAST_POINT.0, SAMPLE_FORECAST_POINT.1).unwrap());
    }
    to_ascii(&series, &reqs)
}

fn config_text(verify: bool) -> String {
    let mut s = String::new();
    writeln!(s, "# sample {} configuration", if verify { "verify" } else { "serve" }).unwrap();
    writeln!(s, "host = 127.0.0.1").unwrap();
    writeln!(s, "port = {}", if verify { 0 } else { 8000 }).unwrap();
    writeln!(s).unwrap();
    if verify {
        writeln!(s, "terrain.raster = raster.asc").unwrap();
        writeln!(s, "terrain.contours = contours.csv").unwrap();
        writeln!(s, "terrain.color = color.png").unwrap();
        writeln!(s, "terrain.tile_size = 256").unwrap();
    } else {
        writeln!(s, "# build first: twinbridge terrain build raster.asc contours.csv --color color.png -o tiles").unwrap();
        writeln!(s, "terrain.tile_dir = tiles").unwrap();
    }
    writeln!(s).unwrap();
    writeln!(s, "forecast.params = {}", SAMPLE_FORECAST_PARAMS.join(", ")).unwrap();
    writeln!(s, "forecast.y = {}", SAMPLE_FORECAST_POINT.0).unwrap();
    writeln!(s, "forecast.x = {}", SAMPLE_FORECAST_POINT.1).unwrap();
    writeln!(s, "forecast.fixture = forecast_fixture.ascii").unwrap();
    writeln!(s).unwrap();
    writeln!(s, "poll.period_ms = {}", if verify { 50 } else { 1000 }).unwrap();
    writeln!(s, "poll.clients = 4").unwrap();
    writeln!(s).unwrap();
    writeln!(s, "source.id = turbine1").unwrap();
    writeln!(s, "source.csv = telemetry.csv").unwrap();
    writeln!(s, "source.speed = {}", if verify { 10 } else { 1 }).unwrap();
    writeln!(s, "source.loop = {}", !verify).unwrap();
    writeln!(s).unwrap();
    writeln!(s, "source.id = buoy1").unwrap();
    writeln!(s, "source.kind = mock").unwrap();
    writeln!(s, "source.script = buoy.csv").unwrap();
    writeln!(s, "source.speed = {}", if verify { 10 } else { 1 }).unwrap();
    writeln!(s, "source.loop = {}", !verify).unwrap();
    writeln!(s, "source.credential = {SAMPLE_CREDENTIAL}").unwrap();
    s
}
