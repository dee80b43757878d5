//! Contract for authenticated third-party telemetry streams.
//!
//! A stream must be authenticated before it can be subscribed, and every
//! record it yields must be a valid [`TelemetryRecord`] in non-decreasing
//! timestamp order. [`conformance::run`] checks an implementation against
//! this contract.

use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use thiserror::Error;

use super::TelemetryRecord;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AdapterError {
    #[error("authentication failed")]
    Authentication,
    #[error("subscribe called before a successful authenticate")]
    NotAuthenticated,
    #[error("stream error: {0}")]
    Stream(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub id: String,
    pub established: DateTime<Utc>,
}

pub type RecordStream = Box<dyn Iterator<Item = TelemetryRecord> + Send>;

pub trait StreamAdapter: Send {
    fn authenticate(&mut self, credential: &str) -> Result<Session, AdapterError>;

    /// Starts delivery of the listed channels; an empty list means all channels.
    fn subscribe(&mut self, channels: &[String]) -> Result<RecordStream, AdapterError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeliveryMode {
    /// Everything at once.
    Burst,
    /// Paced by record timestamps, scaled by `speed`.
    RealTime { speed: f64 },
}

/// In-process adapter that plays back a fixed script after authentication.
pub struct MockStreamAdapter {
    credential: String,
    script: Vec<TelemetryRecord>,
    mode: DeliveryMode,
    session: Option<Session>,
    sessions_issued: u64,
}

pub fn mock_stream_adapter(credential: impl Into<String>, script: Vec<TelemetryRecord>) -> MockStreamAdapter {
    MockStreamAdapter::new(credential, script, DeliveryMode::Burst)
}

impl MockStreamAdapter {
    pub fn new(credential: impl Into<String>, mut script: Vec<TelemetryRecord>, mode: DeliveryMode) -> Self {
        script.sort_by_key(|r| r.timestamp);
        Self {
            credential: credential.into(),
            script,
            mode,
            session: None,
            sessions_issued: 0,
        }
    }
}

impl StreamAdapter for MockStreamAdapter {
    fn authenticate(&mut self, credential: &str) -> Result<Session, AdapterError> {
        if credential.is_empty() || credential != self.credential {
            self.session = None;
            return Err(AdapterError::Authentication);
        }
        self.sessions_issued += 1;
        let session = Session {
            id: format!("mock-session-{}", self.sessions_issued),
            established: Utc::now(),
        };
        self.session = Some(session.clone());
        Ok(session)
    }

    fn subscribe(&mut self, channels: &[String]) -> Result<RecordStream, AdapterError> {
        if self.session.is_none() {
            return Err(AdapterError::NotAuthenticated);
        }
        let records: Vec<TelemetryRecord> = self
            .script
            .iter()
            .filter_map(|r| {
                let mut r = r.clone();
                if !channels.is_empty() {
                    r.values.retain(|k, _| channels.contains(k));
                }
                (!r.values.is_empty()).then_some(r)
            })
            .collect();
        match self.mode {
            DeliveryMode::Burst => Ok(Box::new(records.into_iter())),
            DeliveryMode::RealTime { speed } => {
                if !(speed > 0.0 && speed.is_finite()) {
                    return Err(AdapterError::Stream(format!("invalid speed {speed}")));
                }
                Ok(Box::new(Paced {
                    first: records.first().map(|r| r.timestamp),
                    records: records.into_iter(),
                    start: Instant::now(),
                    speed,
                }))
            }
        }
    }
}

struct Paced {
    records: std::vec::IntoIter<TelemetryRecord>,
    first: Option<DateTime<Utc>>,
    start: Instant,
    speed: f64,
}

impl Iterator for Paced {
    type Item = TelemetryRecord;

    fn next(&mut self) -> Option<TelemetryRecord> {
        let rec = self.records.next()?;
        let offset = (rec.timestamp - self.first?).num_nanoseconds().unwrap_or(0) as f64 / 1e9 / self.speed;
        let due = self.start + Duration::from_secs_f64(offset.max(0.0));
        let now = Instant::now();
        if due > now {
            std::thread::sleep(due - now);
        }
        Some(rec)
    }
}

/// Shared contract checks for any [`StreamAdapter`].
pub mod conformance {
    use super::*;

    #[derive(Debug, Clone)]
    pub struct CheckResult {
        pub name: &'static str,
        pub outcome: Result<(), String>,
    }

    #[derive(Debug, Clone)]
    pub struct ConformanceReport {
        pub checks: Vec<CheckResult>,
    }

    impl ConformanceReport {
        pub fn passed(&self) -> bool {
            self.checks.iter().all(|c| c.outcome.is_ok())
        }

        pub fn failures(&self) -> Vec<&CheckResult> {
            self.checks.iter().filter(|c| c.outcome.is_err()).collect()
        }
    }

    /// Runs every check, each against a fresh adapter from `make`.
    ///
    /// `expected` is the number of records a full subscription should yield,
    /// when known.
    pub fn run<A, F>(make: F, credential: &str, wrong_credential: &str, expected: Option<usize>) -> ConformanceReport
    where
        A: StreamAdapter,
        F: Fn() -> A,
    {
        let mut checks = Vec::new();
        let mut check = |name: &'static str, outcome: Result<(), String>| {
            checks.push(CheckResult { name, outcome });
        };

        check("subscribe before authenticate is rejected", {
            let mut a = make();
            match a.subscribe(&[]) {
                Err(AdapterError::NotAuthenticated) => Ok(()),
                Err(e) => Err(format!("wrong error: {e}")),
                Ok(_) => Err("stream was opened without a session".into()),
            }
        });

        check("wrong credential is rejected", {
            let mut a = make();
            match a.authenticate(wrong_credential) {
                Err(AdapterError::Authentication) => Ok(()),
                Err(e) => Err(format!("wrong error: {e}")),
                Ok(_) => Err("session granted to a wrong credential".into()),
            }
        });

        check("failed authentication does not open the stream", {
            let mut a = make();
            let _ = a.authenticate(wrong_credential);
            match a.subscribe(&[]) {
                Err(AdapterError::NotAuthenticated) => Ok(()),
                Err(e) => Err(format!("wrong error: {e}")),
                Ok(_) => Err("stream opened after failed authentication".into()),
            }
        });

        check("correct credential establishes a session", {
            let mut a = make();
            a.authenticate(credential).map(|_| ()).map_err(|e| e.to_string())
        });

        let delivered: Result<Vec<TelemetryRecord>, String> = {
            let mut a = make();
            a.authenticate(credential)
                .map_err(|e| e.to_string())
                .and_then(|_| a.subscribe(&[]).map_err(|e| e.to_string()))
                .map(|s| s.collect())
        };

        check("delivered records are valid", {
            delivered.as_ref().map_err(Clone::clone).and_then(|recs| {
                recs.iter()
                    .enumerate()
                    .try_for_each(|(i, r)| r.validate().map_err(|e| format!("record {i}: {e}")))
            })
        });

        check("delivered records are time-ordered", {
            delivered.as_ref().map_err(Clone::clone).and_then(|recs| {
                match recs.windows(2).position(|w| w[1].timestamp < w[0].timestamp) {
                    Some(i) => Err(format!("record {} precedes record {i}", i + 1)),
                    None => Ok(()),
                }
            })
        });

        if let Some(n) = expected {
            check("full subscription delivers the whole stream", {
                delivered.as_ref().map_err(Clone::clone).and_then(|recs| {
                    if recs.len() == n {
                        Ok(())
                    } else {
                        Err(format!("expected {n} records, got {}", recs.len()))
                    }
                })
            });
        }

        ConformanceReport { checks }
    }
}
