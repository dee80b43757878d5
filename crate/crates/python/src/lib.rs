//! Python bindings: terrain build, neighbor search, forecast URLs and parsing,
//! telemetry loading and the sample dataset generator.

use std::path::PathBuf;
use std::time::Duration;

use chrono::Utc;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use twinbridge::harness::config::TerrainConfig;
use twinbridge::harness::{build_terrain as build, sample};
use twinbridge::metocean::{self, ForecastCycle, ParamRequest};
use twinbridge::raster::kdtree;
use twinbridge::telemetry::{self, parse_timestamp};
use twinbridge::tiles::{NormScope, DEFAULT_TILE_SIZE};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn requests(params: &[String], y: u32, x: u32) -> PyResult<Vec<ParamRequest>> {
    params
        .iter()
        .map(|p| ParamRequest::point_series(p.clone(), y, x))
        .collect::<Result<_, _>>()
        .map_err(value_err)
}

fn cycle_from_stamp(stamp: &str) -> PyResult<ForecastCycle> {
    // 20240115T06Z
    let bad = || PyValueError::new_err(format!("bad cycle stamp `{stamp}`, want YYYYMMDDTHHZ"));
    if stamp.len() != 12 || !stamp.is_ascii() || &stamp[8..9] != "T" || &stamp[11..] != "Z" {
        return Err(bad());
    }
    let num = |r: std::ops::Range<usize>| stamp[r].parse::<u32>().map_err(|_| bad());
    ForecastCycle::new(num(0..4)? as i32, num(4..6)?, num(6..8)?, num(9..11)?).map_err(value_err)
}

/// Merge raster and contours, slice and write a tile set. Returns a summary dict.
#[pyfunction]
#[pyo3(signature = (raster, contours, out_dir, color=None, tile_size=DEFAULT_TILE_SIZE, sea_level=0.0, normalization="global"))]
#[allow(clippy::too_many_arguments)]
fn build_terrain<'py>(
    py: Python<'py>,
    raster: PathBuf,
    contours: PathBuf,
    out_dir: PathBuf,
    color: Option<PathBuf>,
    tile_size: usize,
    sea_level: f64,
    normalization: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let normalization =
        NormScope::parse(normalization).ok_or_else(|| value_err(format!("unknown normalization `{normalization}`")))?;
    if tile_size == 0 {
        return Err(value_err("tile_size must be positive"));
    }
    let job = TerrainConfig {
        raster,
        contours,
        color,
        tile_size,
        sea_level,
        normalization,
    };
    let s = py.detach(|| build(&job, &out_dir)).map_err(|e| {
        if e.is_input_error() {
            value_err(e)
        } else {
            PyIOError::new_err(e.to_string())
        }
    })?;
    let d = PyDict::new(py);
    d.set_item("tiles", s.tiles)?;
    d.set_item("rows", s.rows)?;
    d.set_item("cols", s.cols)?;
    d.set_item("width", s.width)?;
    d.set_item("height", s.height)?;
    d.set_item("extent", s.extent)?;
    d.set_item("elevation", s.elevation)?;
    d.set_item("ocean_cells", s.ocean_cells)?;
    d.set_item("files", s.files)?;
    d.set_item("elapsed_s", s.elapsed.as_secs_f64())?;
    Ok(d)
}

/// 2-D k-d tree over `(x, y)` points.
#[pyclass(frozen)]
struct KdTree {
    inner: kdtree::KdTree,
}

#[pymethods]
impl KdTree {
    #[new]
    fn new(points: Vec<(f64, f64)>) -> PyResult<Self> {
        if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(value_err("points must be finite"));
        }
        let pts: Vec<[f64; 2]> = points.into_iter().map(|(x, y)| [x, y]).collect();
        Ok(Self {
            inner: kdtree::KdTree::build(&pts),
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// `k` nearest as `(index, distance)`, nearest first; ties by index.
    fn nearest(&self, x: f64, y: f64, k: usize) -> Vec<(usize, f64)> {
        self.inner.nearest(x, y, k).iter().map(|n| (n.index, n.distance())).collect()
    }

    fn within_radius(&self, x: f64, y: f64, radius: f64) -> Vec<(usize, f64)> {
        self.inner
            .within_radius(x, y, radius)
            .iter()
            .map(|n| (n.index, n.distance()))
            .collect()
    }
}

/// Cycle stamp (e.g. `20240115T12Z`) current at `at` (ISO time, default now).
#[pyfunction]
#[pyo3(signature = (at=None, delay_hours=0))]
fn latest_cycle(at: Option<&str>, delay_hours: u64) -> PyResult<String> {
    let now = match at {
        Some(s) => parse_timestamp(s).ok_or_else(|| value_err(format!("cannot parse time `{s}`")))?,
        None => Utc::now(),
    };
    Ok(metocean::latest_cycle(now, Duration::from_secs(delay_hours * 3600)).stamp())
}

/// Request URL for full-horizon point series of `params` at grid `(y, x)`.
#[pyfunction]
#[pyo3(signature = (cycle, params, y, x, base_url=metocean::DEFAULT_BASE_URL))]
fn forecast_url(cycle: &str, params: Vec<String>, y: u32, x: u32, base_url: &str) -> PyResult<String> {
    let c = cycle_from_stamp(cycle)?;
    metocean::build_url_with_base(base_url, &c, &requests(&params, y, x)?).map_err(value_err)
}

/// `(param, lead_hours, values)`
type Series = (String, Vec<u32>, Vec<f64>);

/// Parse a DODS ASCII body into `(param, lead_hours, values)` tuples in request order.
#[pyfunction]
fn parse_forecast(body: &str, cycle: &str, params: Vec<String>, y: u32, x: u32) -> PyResult<Vec<Series>> {
    let c = cycle_from_stamp(cycle)?;
    let series = metocean::parse_ascii(body, &requests(&params, y, x)?, c).map_err(value_err)?;
    Ok(series.into_iter().map(|s| (s.param, s.lead_hours, s.values)).collect())
}

/// Load a telemetry CSV as a list of `{source_id, timestamp, values}` dicts.
#[pyfunction]
#[pyo3(signature = (path, source_id, timestamp_column="timestamp", channels=vec![]))]
fn load_telemetry<'py>(
    py: Python<'py>,
    path: PathBuf,
    source_id: &str,
    timestamp_column: &str,
    channels: Vec<String>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let recs = telemetry::load_csv(&path, source_id, timestamp_column, &channels).map_err(value_err)?;
    recs.into_iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("source_id", r.source_id)?;
            d.set_item("timestamp", r.timestamp.to_rfc3339_opts(chrono::SecondsFormat::Millis, true))?;
            d.set_item("values", r.values)?;
            Ok(d)
        })
        .collect()
}

/// Write the synthetic sample dataset; returns the written paths.
#[pyfunction]
#[pyo3(signature = (out_dir, size=sample::DEFAULT_SAMPLE_SIZE, seed=sample::DEFAULT_SEED))]
fn generate_sample(py: Python<'_>, out_dir: PathBuf, size: usize, seed: u64) -> PyResult<Vec<PathBuf>> {
    if size < 16 {
        return Err(value_err("size must be at least 16"));
    }
    py.detach(|| sample::generate_sample(&out_dir, size, seed))
        .map_err(|e| PyIOError::new_err(format!("{}: {e}", out_dir.display())))
}

#[pymodule]
fn pytwinbridge(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<KdTree>()?;
    m.add_function(wrap_pyfunction!(build_terrain, m)?)?;
    m.add_function(wrap_pyfunction!(latest_cycle, m)?)?;
    m.add_function(wrap_pyfunction!(forecast_url, m)?)?;
    m.add_function(wrap_pyfunction!(parse_forecast, m)?)?;
    m.add_function(wrap_pyfunction!(load_telemetry, m)?)?;
    m.add_function(wrap_pyfunction!(generate_sample, m)?)?;
    m.add("HORIZON_SAMPLES", metocean::HORIZON_SAMPLES)?;
    Ok(())
}
