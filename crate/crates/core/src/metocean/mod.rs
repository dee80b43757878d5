//! Forecast retrieval from an OPeNDAP-style ASCII endpoint.
//!
//! A request URL is the cycle-specific base followed by comma-separated
//! parameter subsets, each `name` plus one `%5Bstart:step:end%5D` per
//! dimension (time, ensemble member, height, grid y, grid x).

mod ascii;

use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Datelike, NaiveDate, TimeZone, Timelike, Utc};
use serde::Serialize;
use thiserror::Error;

pub use ascii::{parse_ascii, to_ascii};

pub const DEFAULT_BASE_URL: &str = "https://thredds.met.no/thredds/dodsC/mepslatest/meps_lagged_6_h_vc_2_5km_";
/// Model runs start at these UTC hours.
pub const CYCLE_HOURS: [u32; 4] = [0, 6, 12, 18];
/// Hourly samples per forecast, leads 0 through 60.
pub const HORIZON_SAMPLES: usize = 61;
pub const DEFAULT_PUBLICATION_DELAY_HOURS: u64 = 3;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Error)]
pub enum MetoceanError {
    #[error("invalid forecast cycle {0}")]
    InvalidCycle(String),
    #[error("invalid range {0}")]
    InvalidRange(String),
    #[error("invalid parameter name `{0}`")]
    InvalidName(String),
    #[error("empty parameter list")]
    EmptyParams,
    #[error("{url}: HTTP status {status}")]
    Status { url: String, status: u16 },
    #[error("{url}: timed out")]
    Timeout { url: String },
    #[error("{url}: transport error: {msg}")]
    Transport { url: String, msg: String },
    #[error("unknown parameter block `{0}`")]
    UnknownBlock(String),
    #[error("parameter `{0}` missing from response")]
    MissingBlock(String),
    #[error("duplicate parameter block `{0}`")]
    DuplicateBlock(String),
    #[error("block `{param}`: count mismatch, expected {expected} values, found {found}")]
    CountMismatch {
        param: String,
        expected: usize,
        found: usize,
    },
    #[error("block `{param}` line {line}: non-numeric value `{token}`")]
    NonNumeric {
        param: String,
        line: usize,
        token: String,
    },
    #[error("malformed block header `{0}`")]
    Header(String),
    #[error("empty response body")]
    EmptyBody,
    #[error("parameter `{0}` spans more than the time dimension")]
    NotATimeSeries(String),
    #[error("invalid series for `{param}`: {msg}")]
    InvalidSeries { param: String, msg: String },
}

/// One scheduled model run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct ForecastCycle {
    date: NaiveDate,
    hour: u32,
}

impl ForecastCycle {
    pub fn new(year: i32, month: u32, day: u32, hour: u32) -> Result<Self, MetoceanError> {
        let date = NaiveDate::from_ymd_opt(year, month, day)
            .ok_or_else(|| MetoceanError::InvalidCycle(format!("{year:04}-{month:02}-{day:02}")))?;
        if !CYCLE_HOURS.contains(&hour) {
            return Err(MetoceanError::InvalidCycle(format!("hour {hour}")));
        }
        Ok(Self { date, hour })
    }

    pub fn year(&self) -> i32 {
        self.date.year()
    }

    pub fn month(&self) -> u32 {
        self.date.month()
    }

    pub fn day(&self) -> u32 {
        self.date.day()
    }

    pub fn hour(&self) -> u32 {
        self.hour
    }

    pub fn start_time(&self) -> DateTime<Utc> {
        Utc.from_utc_datetime(&self.date.and_hms_opt(self.hour, 0, 0).unwrap())
    }

    /// The run six hours earlier.
    pub fn previous(&self) -> Self {
        if self.hour >= 6 {
            Self {
                date: self.date,
                hour: self.hour - 6,
            }
        } else {
            Self {
                date: self.date.pred_opt().expect("date underflow"),
                hour: 18,
            }
        }
    }

    /// `yyyymmddThhZ`
    pub fn stamp(&self) -> String {
        format!(
            "{:04}{:02}{:02}T{:02}Z",
            self.year(),
            self.month(),
            self.day(),
            self.hour
        )
    }
}

impl std::fmt::Display for ForecastCycle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {:02}Z", self.date, self.hour)
    }
}

/// Most recent cycle whose start plus `publication_delay` is not after `now`.
pub fn latest_cycle(now: DateTime<Utc>, publication_delay: Duration) -> ForecastCycle {
    let delay = chrono::Duration::from_std(publication_delay).expect("delay out of range");
    let t = now - delay;
    ForecastCycle {
        date: t.date_naive(),
        hour: t.hour() / 6 * 6,
    }
}

/// Index subset `start:stepsize:end` along one dimension, `end` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DimRange {
    pub start: u32,
    pub stepsize: u32,
    pub end: u32,
}

impl DimRange {
    pub fn new(start: u32, stepsize: u32, end: u32) -> Result<Self, MetoceanError> {
        if stepsize == 0 || start > end {
            return Err(MetoceanError::InvalidRange(format!("{start}:{stepsize}:{end}")));
        }
        Ok(Self { start, stepsize, end })
    }

    /// A one-sample range at `index`.
    pub fn single(index: u32) -> Self {
        Self {
            start: index,
            stepsize: 1,
            end: index,
        }
    }

    pub fn count(&self) -> usize {
        ((self.end - self.start) / self.stepsize) as usize + 1
    }

    pub fn is_singleton(&self) -> bool {
        self.count() == 1
    }

    pub fn indices(&self) -> impl Iterator<Item = u32> {
        (self.start..=self.end).step_by(self.stepsize as usize)
    }

    /// Parses `start:step:end`, or a bare `index`.
    pub fn parse(s: &str) -> Result<Self, MetoceanError> {
        let bad = || MetoceanError::InvalidRange(s.to_string());
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |p: &str| p.trim().parse::<u32>().map_err(|_| bad());
        match parts.as_slice() {
            [i] => Ok(Self::single(num(i)?)),
            [a, b] => Self::new(num(a)?, 1, num(b)?),
            [a, st, b] => Self::new(num(a)?, num(st)?, num(b)?),
            _ => Err(bad()),
        }
    }

    fn encoded(&self) -> String {
        format!("%5B{}:{}:{}%5D", self.start, self.stepsize, self.end)
    }
}

/// One variable and its per-dimension subsets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamRequest {
    pub name: String,
    pub ranges: Vec<DimRange>,
}

impl ParamRequest {
    pub fn new(name: impl Into<String>, ranges: Vec<DimRange>) -> Result<Self, MetoceanError> {
        let name = name.into();
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(MetoceanError::InvalidName(name));
        }
        if ranges.is_empty() {
            return Err(MetoceanError::InvalidRange(format!("`{name}` has no ranges")));
        }
        Ok(Self { name, ranges })
    }

    /// Full 61-hour series at one grid point of the first member and level.
    pub fn point_series(name: impl Into<String>, y: u32, x: u32) -> Result<Self, MetoceanError> {
        Self::new(
            name,
            vec![
                DimRange::new(0, 1, HORIZON_SAMPLES as u32 - 1)?,
                DimRange::single(0),
                DimRange::single(0),
                DimRange::single(y),
                DimRange::single(x),
            ],
        )
    }

    pub fn sample_count(&self) -> usize {
        self.ranges.iter().map(DimRange::count).product()
    }

    fn encoded(&self) -> String {
        let mut s = self.name.clone();
        for r in &self.ranges {
            s.push_str(&r.encoded());
        }
        s
    }
}

pub fn build_url(cycle: &ForecastCycle, params: &[ParamRequest]) -> Result<String, MetoceanError> {
    build_url_with_base(DEFAULT_BASE_URL, cycle, params)
}

pub fn build_url_with_base(base: &str, cycle: &ForecastCycle, params: &[ParamRequest]) -> Result<String, MetoceanError> {
    if params.is_empty() {
        return Err(MetoceanError::EmptyParams);
    }
    let subsets: Vec<String> = params.iter().map(ParamRequest::encoded).collect();
    Ok(format!("{base}{}.ncml.ascii?{}", cycle.stamp(), subsets.join(",")))
}

/// Hourly forecast of one parameter at one point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForecastSeries {
    pub param: String,
    pub cycle: ForecastCycle,
    pub lead_hours: Vec<u32>,
    pub values: Vec<f64>,
    pub units: String,
}

impl ForecastSeries {
    pub fn new(
        param: impl Into<String>,
        cycle: ForecastCycle,
        lead_hours: Vec<u32>,
        values: Vec<f64>,
        units: impl Into<String>,
    ) -> Result<Self, MetoceanError> {
        let param = param.into();
        let invalid = |msg: String| MetoceanError::InvalidSeries {
            param: param.clone(),
            msg,
        };
        if lead_hours.len() != values.len() {
            return Err(invalid(format!(
                "{} leads but {} values",
                lead_hours.len(),
                values.len()
            )));
        }
        if lead_hours.len() > HORIZON_SAMPLES {
            return Err(invalid(format!("{} samples exceed the horizon", lead_hours.len())));
        }
        if lead_hours.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("lead hours not strictly increasing".into()));
        }
        if lead_hours.last().is_some_and(|&h| h as usize >= HORIZON_SAMPLES) {
            return Err(invalid("lead hour beyond the forecast horizon".into()));
        }
        Ok(Self {
            param,
            cycle,
            lead_hours,
            values,
            units: units.into(),
        })
    }

    /// Samples with lead hour `<= horizon`.
    pub fn truncated(&self, horizon: u32) -> Self {
        let n = self.lead_hours.iter().take_while(|&&h| h <= horizon).count();
        Self {
            param: self.param.clone(),
            cycle: self.cycle,
            lead_hours: self.lead_hours[..n].to_vec(),
            values: self.values[..n].to_vec(),
            units: self.units.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

/// Outbound HTTP GET, injectable so tests never reach the live service.
pub trait Transport: Send + Sync {
    fn get(&self, url: &str) -> Result<HttpResponse, MetoceanError>;
}

/// Blocking HTTP transport. Do not call from inside an async runtime thread.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Result<Self, MetoceanError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| MetoceanError::Transport {
                url: String::new(),
                msg: e.to_string(),
            })?;
        Ok(Self { client })
    }
}

impl Transport for HttpTransport {
    fn get(&self, url: &str) -> Result<HttpResponse, MetoceanError> {
        let map = |e: reqwest::Error| {
            if e.is_timeout() {
                MetoceanError::Timeout { url: url.to_string() }
            } else {
                MetoceanError::Transport {
                    url: url.to_string(),
                    msg: error_chain(&e),
                }
            }
        };
        let resp = self.client.get(url).send().map_err(map)?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(map)?;
        Ok(HttpResponse { status, body })
    }
}

fn error_chain(e: &dyn std::error::Error) -> String {
    let mut s = e.to_string();
    let mut src = e.source();
    while let Some(inner) = src {
        s.push_str(": ");
        s.push_str(&inner.to_string());
        src = inner.source();
    }
    s
}

/// GET `url`, returning the body on a 2xx status.
pub fn fetch(transport: &dyn Transport, url: &str) -> Result<String, MetoceanError> {
    let resp = transport.get(url)?;
    if (200..300).contains(&resp.status) {
        Ok(resp.body)
    } else {
        Err(MetoceanError::Status {
            url: url.to_string(),
            status: resp.status,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FetchOutcome {
    pub cycle: ForecastCycle,
    pub url: String,
    pub body: String,
    /// The latest cycle answered with an error status and the previous one was used.
    pub fell_back: bool,
}

/// Cycle selection, URL construction, and fetch with one-cycle fallback.
#[derive(Clone)]
pub struct ForecastClient {
    transport: Arc<dyn Transport>,
    base_url: String,
    publication_delay: Duration,
}

impl ForecastClient {
    pub fn new(transport: Arc<dyn Transport>) -> Self {
        Self {
            transport,
            base_url: DEFAULT_BASE_URL.to_string(),
            publication_delay: Duration::from_secs(DEFAULT_PUBLICATION_DELAY_HOURS * 3600),
        }
    }

    pub fn with_base_url(mut self, base: impl Into<String>) -> Self {
        self.base_url = base.into();
        self
    }

    pub fn with_publication_delay(mut self, delay: Duration) -> Self {
        self.publication_delay = delay;
        self
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    pub fn cycle_at(&self, now: DateTime<Utc>) -> ForecastCycle {
        latest_cycle(now, self.publication_delay)
    }

    pub fn url_for(&self, cycle: &ForecastCycle, params: &[ParamRequest]) -> Result<String, MetoceanError> {
        build_url_with_base(&self.base_url, cycle, params)
    }

    /// Fetches the latest cycle; on an error status retries the previous cycle once.
    pub fn fetch_latest(&self, now: DateTime<Utc>, params: &[ParamRequest]) -> Result<FetchOutcome, MetoceanError> {
        let cycle = self.cycle_at(now);
        let url = self.url_for(&cycle, params)?;
        match fetch(self.transport.as_ref(), &url) {
            Ok(body) => Ok(FetchOutcome {
                cycle,
                url,
                body,
                fell_back: false,
            }),
            Err(MetoceanError::Status { status, .. }) => {
                let prev = cycle.previous();
                let prev_url = self.url_for(&prev, params)?;
                tracing::warn!(%url, status, fallback = %prev_url, "latest cycle unavailable");
                let body = fetch(self.transport.as_ref(), &prev_url)?;
                Ok(FetchOutcome {
                    cycle: prev,
                    url: prev_url,
                    body,
                    fell_back: true,
                })
            }
            Err(e) => Err(e),
        }
    }

    /// Fetch and parse in one step.
    pub fn forecast(&self, now: DateTime<Utc>, params: &[ParamRequest]) -> Result<(FetchOutcome, Vec<ForecastSeries>), MetoceanError> {
        let out = self.fetch_latest(now, params)?;
        let series = parse_ascii(&out.body, params, out.cycle)?;
        Ok((out, series))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::sync::Mutex;

    fn at(s: &str) -> DateTime<Utc> {
        DateTime::parse_from_rfc3339(s).unwrap().with_timezone(&Utc)
    }

    fn hours(h: u64) -> Duration {
        Duration::from_secs(h * 3600)
    }

    #[test]
    fn cycle_floors_to_six_hours() {
        let c = latest_cycle(at("2024-01-15T13:30:00Z"), hours(0));
        assert_eq!(c, ForecastCycle::new(2024, 1, 15, 12).unwrap());
    }

    #[test]
    fn cycle_rolls_back_over_midnight() {
        let c = latest_cycle(at("2024-01-15T02:00:00Z"), hours(3));
        assert_eq!(c, ForecastCycle::new(2024, 1, 14, 18).unwrap());
        let c = latest_cycle(at("2024-03-01T01:00:00Z"), hours(3));
        assert_eq!(c, ForecastCycle::new(2024, 2, 29, 18).unwrap());
    }

    #[test]
    fn cycle_boundary_is_inclusive() {
        let c = latest_cycle(at("2024-01-15T06:00:00Z"), hours(0));
        assert_eq!(c.hour(), 6);
        let c = latest_cycle(at("2024-01-15T05:59:59Z"), hours(0));
        assert_eq!(c.hour(), 0);
    }

    #[test]
    fn invalid_cycles_rejected() {
        assert!(ForecastCycle::new(2024, 1, 15, 3).is_err());
        assert!(ForecastCycle::new(2023, 2, 29, 0).is_err());
    }

    #[test]
    fn previous_cycle_wraps() {
        let c = ForecastCycle::new(2024, 1, 1, 0).unwrap();
        assert_eq!(c.previous(), ForecastCycle::new(2023, 12, 31, 18).unwrap());
        assert_eq!(c.stamp(), "20240101T00Z");
    }

    #[test]
    fn range_rules() {
        assert!(DimRange::new(5, 1, 4).is_err());
        assert!(DimRange::new(0, 0, 4).is_err());
        assert_eq!(DimRange::new(0, 1, 60).unwrap().count(), 61);
        assert_eq!(DimRange::new(3, 4, 17).unwrap().count(), 4);
        assert_eq!(DimRange::parse("7").unwrap(), DimRange::single(7));
        assert_eq!(DimRange::parse("0:2:10").unwrap(), DimRange::new(0, 2, 10).unwrap());
        assert!(DimRange::parse("a:1:2").is_err());
    }

    #[test]
    fn names_are_url_safe() {
        assert!(ParamRequest::new("", vec![DimRange::single(0)]).is_err());
        assert!(ParamRequest::new("a,b", vec![DimRange::single(0)]).is_err());
        assert!(ParamRequest::new("x_wind_10m", vec![]).is_err());
    }

    #[test]
    fn empty_params_rejected() {
        let c = ForecastCycle::new(2024, 1, 15, 6).unwrap();
        assert!(matches!(build_url(&c, &[]), Err(MetoceanError::EmptyParams)));
    }

    #[test]
    fn two_params_joined_by_one_comma() {
        let c = ForecastCycle::new(2024, 1, 15, 0).unwrap();
        let a = ParamRequest::new("a", vec![DimRange::single(1)]).unwrap();
        let b = ParamRequest::new("b", vec![DimRange::new(0, 2, 4).unwrap()]).unwrap();
        let url = build_url(&c, &[a, b]).unwrap();
        assert!(url.ends_with("20240115T00Z.ncml.ascii?a%5B1:1:1%5D,b%5B0:2:4%5D"), "{url}");
    }

    #[test]
    fn truncation_is_inclusive() {
        let c = ForecastCycle::new(2024, 1, 15, 0).unwrap();
        let s = ForecastSeries::new("p", c, (0..61).collect(), vec![1.0; 61], "").unwrap();
        assert_eq!(s.truncated(12).values.len(), 13);
        assert_eq!(s.truncated(100).values.len(), 61);
        assert!(ForecastSeries::new("p", c, (0..62).collect(), vec![1.0; 62], "").is_err());
        assert!(ForecastSeries::new("p", c, vec![0, 0], vec![1.0; 2], "").is_err());
    }

    struct Scripted {
        responses: Mutex<Vec<Result<HttpResponse, MetoceanError>>>,
        seen: Mutex<Vec<String>>,
    }

    impl Transport for Scripted {
        fn get(&self, url: &str) -> Result<HttpResponse, MetoceanError> {
            self.seen.lock().unwrap().push(url.to_string());
            self.responses.lock().unwrap().remove(0)
        }
    }

    fn scripted(r: Vec<Result<HttpResponse, MetoceanError>>) -> Arc<Scripted> {
        Arc::new(Scripted {
            responses: Mutex::new(r),
            seen: Mutex::new(vec![]),
        })
    }

    #[test]
    fn fetch_passes_body_through() {
        let t = scripted(vec![Ok(HttpResponse { status: 200, body: "hello\n".into() })]);
        assert_eq!(fetch(t.as_ref(), "http://x").unwrap(), "hello\n");
    }

    #[test]
    fn fallback_to_previous_cycle_on_404() {
        let t = scripted(vec![
            Ok(HttpResponse { status: 404, body: String::new() }),
            Ok(HttpResponse { status: 200, body: "prev".into() }),
        ]);
        let client = ForecastClient::new(t.clone()).with_publication_delay(hours(0));
        let p = ParamRequest::point_series("x_wind_10m", 0, 0).unwrap();
        let out = client.fetch_latest(at("2024-01-15T13:30:00Z"), &[p]).unwrap();
        assert!(out.fell_back);
        assert_eq!(out.body, "prev");
        assert_eq!(out.cycle, ForecastCycle::new(2024, 1, 15, 6).unwrap());
        let seen = t.seen.lock().unwrap();
        assert!(seen[0].contains("20240115T12Z") && seen[1].contains("20240115T06Z"));
    }

    #[test]
    fn fallback_failure_surfaces_second_error() {
        let t = scripted(vec![
            Ok(HttpResponse { status: 404, body: String::new() }),
            Ok(HttpResponse { status: 500, body: String::new() }),
        ]);
        let client = ForecastClient::new(t).with_publication_delay(hours(0));
        let p = ParamRequest::point_series("p", 0, 0).unwrap();
        let err = client.fetch_latest(at("2024-01-15T13:30:00Z"), &[p]).unwrap_err();
        assert!(matches!(err, MetoceanError::Status { status: 500, ref url } if url.contains("T06Z")));
    }

    #[test]
    fn transport_errors_do_not_fall_back() {
        let t = scripted(vec![Err(MetoceanError::Timeout { url: "u".into() })]);
        let client = ForecastClient::new(t.clone());
        let p = ParamRequest::point_series("p", 0, 0).unwrap();
        assert!(client.fetch_latest(Utc::now(), &[p]).is_err());
        assert_eq!(t.seen.lock().unwrap().len(), 1);
    }

    proptest! {
        #[test]
        fn cycle_is_monotone(
            base in 0i64..2_000_000_000, dt in 0i64..500_000, d1 in 0u64..48, d2 in 0u64..48,
        ) {
            let t0 = Utc.timestamp_opt(base, 0).unwrap();
            let t1 = Utc.timestamp_opt(base + dt, 0).unwrap();
            prop_assert!(latest_cycle(t0, hours(d1)) <= latest_cycle(t1, hours(d1)));
            let (lo, hi) = (d1.min(d2), d1.max(d2));
            prop_assert!(latest_cycle(t0, hours(hi)) <= latest_cycle(t0, hours(lo)));
            let c = latest_cycle(t0, hours(d1));
            prop_assert!(CYCLE_HOURS.contains(&c.hour()));
            prop_assert!(c.start_time() + chrono::Duration::hours(d1 as i64) <= t0);
            prop_assert!(c.start_time() + chrono::Duration::hours(d1 as i64 + 6) > t0);
        }

        #[test]
        fn sample_count_matches_enumeration(start in 0u32..200, step in 1u32..20, len in 0u32..300) {
            let r = DimRange::new(start, step, start + len).unwrap();
            prop_assert_eq!(r.count(), r.indices().count());
            prop_assert_eq!(r.count(), ((len / step) + 1) as usize);
        }
    }
}
