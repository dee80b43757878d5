//! Wall-clock replay of archived records.
//!
//! Emission times are computed from the replay start, not from the previous
//! emission, so scheduling error does not accumulate over long archives.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use thiserror::Error;

use super::{TelemetryError, TelemetryRecord};

pub type SinkError = Box<dyn std::error::Error + Send + Sync>;

/// Consumer of replayed records, called from the replay worker's thread.
pub trait RecordSink: Send {
    fn accept(&mut self, record: TelemetryRecord) -> Result<(), SinkError>;
}

impl<F> RecordSink for F
where
    F: FnMut(TelemetryRecord) -> Result<(), SinkError> + Send,
{
    fn accept(&mut self, record: TelemetryRecord) -> Result<(), SinkError> {
        self(record)
    }
}

impl RecordSink for std::sync::mpsc::Sender<TelemetryRecord> {
    fn accept(&mut self, record: TelemetryRecord) -> Result<(), SinkError> {
        self.send(record).map_err(|e| e.into())
    }
}

#[derive(Debug, Clone)]
pub struct ReplaySchedule {
    records: Vec<TelemetryRecord>,
    speed: f64,
    looping: bool,
}

impl ReplaySchedule {
    /// `records` are stably sorted by timestamp; `speed` must be positive.
    pub fn new(mut records: Vec<TelemetryRecord>, speed: f64, looping: bool) -> Result<Self, TelemetryError> {
        if !(speed > 0.0 && speed.is_finite()) {
            return Err(TelemetryError::InvalidSchedule(format!("speed must be positive, got {speed}")));
        }
        if records.is_empty() {
            return Err(TelemetryError::InvalidSchedule("no records".into()));
        }
        for r in &records {
            r.validate()?;
        }
        records.sort_by_key(|r| r.timestamp);
        Ok(Self {
            records,
            speed,
            looping,
        })
    }

    pub fn records(&self) -> &[TelemetryRecord] {
        &self.records
    }

    pub fn speed(&self) -> f64 {
        self.speed
    }

    pub fn is_looping(&self) -> bool {
        self.looping
    }

    /// Archive time between first and last record.
    pub fn span(&self) -> chrono::Duration {
        self.records.last().unwrap().timestamp - self.records[0].timestamp
    }

    /// Archive time from one loop's first record to the next loop's first
    /// record: the span plus one mean inter-record gap (1 s if undefined).
    pub fn loop_period(&self) -> chrono::Duration {
        let span = self.span();
        let n = self.records.len() as i32;
        if n > 1 && span > chrono::Duration::zero() {
            span + span / (n - 1)
        } else {
            span + chrono::Duration::seconds(1)
        }
    }

    /// Wall-clock offset from replay start at which archive offset `archive` is emitted.
    pub fn wall_offset(&self, archive: chrono::Duration) -> Duration {
        let secs = archive.num_nanoseconds().unwrap_or(i64::MAX) as f64 / 1e9 / self.speed;
        Duration::from_secs_f64(secs.max(0.0))
    }

    /// Wall time one pass through the archive should take.
    pub fn expected_duration(&self) -> Duration {
        self.wall_offset(self.span())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub delivered: usize,
    /// Completed passes through the archive.
    pub loops: usize,
    pub elapsed: Duration,
    /// Largest delay between a record's due time and its delivery.
    pub max_lateness: Duration,
    pub stopped: bool,
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("sink failed after {delivered} records: {source}")]
    Sink {
        delivered: usize,
        #[source]
        source: SinkError,
    },
}

const STOP_POLL: Duration = Duration::from_millis(20);

/// Sleeps until `due`, returning early (false) if `stop` is raised.
fn sleep_until(due: Instant, stop: &AtomicBool) -> bool {
    loop {
        if stop.load(Ordering::Relaxed) {
            return false;
        }
        let now = Instant::now();
        if now >= due {
            return true;
        }
        std::thread::sleep((due - now).min(STOP_POLL));
    }
}

/// Delivers every record to `sink` at `timestamp gap / speed` spacing.
///
/// Looping schedules restart from the first record with timestamps shifted by
/// [`ReplaySchedule::loop_period`] per pass and run until `stop` is raised.
pub fn replay(schedule: &ReplaySchedule, sink: &mut dyn RecordSink, stop: &AtomicBool) -> Result<ReplayReport, ReplayError> {
    let start = Instant::now();
    let first = schedule.records[0].timestamp;
    let period = schedule.loop_period();
    let mut delivered = 0usize;
    let mut loops = 0usize;
    let mut max_lateness = Duration::ZERO;

    let stopped = 'outer: loop {
        let shift = period * loops as i32;
        for rec in &schedule.records {
            let archive_offset = rec.timestamp - first + shift;
            let due = start + schedule.wall_offset(archive_offset);
            if !sleep_until(due, stop) {
                break 'outer true;
            }
            max_lateness = max_lateness.max(Instant::now().saturating_duration_since(due));
            let mut out = rec.clone();
            out.timestamp = rec.timestamp + shift;
            sink.accept(out).map_err(|source| ReplayError::Sink { delivered, source })?;
            delivered += 1;
        }
        loops += 1;
        if !schedule.looping {
            break false;
        }
    };

    Ok(ReplayReport {
        delivered,
        loops,
        elapsed: start.elapsed(),
        max_lateness,
        stopped,
    })
}

/// A replay running on its own thread.
pub struct ReplayHandle {
    stop: Arc<AtomicBool>,
    join: JoinHandle<Result<ReplayReport, ReplayError>>,
}

impl ReplayHandle {
    pub fn stop(&self) {
        self.stop.store(true, Ordering::Relaxed);
    }

    pub fn is_finished(&self) -> bool {
        self.join.is_finished()
    }

    /// Waits for the replay to end on its own.
    pub fn join(self) -> Result<ReplayReport, ReplayError> {
        self.join.join().expect("replay thread panicked")
    }

    /// Stops and waits.
    pub fn shutdown(self) -> Result<ReplayReport, ReplayError> {
        self.stop();
        self.join()
    }
}

pub fn spawn_replay<S: RecordSink + 'static>(schedule: ReplaySchedule, mut sink: S) -> ReplayHandle {
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    let join = std::thread::Builder::new()
        .name("replay".into())
        .spawn(move || replay(&schedule, &mut sink, &flag))
        .expect("spawn replay thread");
    ReplayHandle { stop, join }
}
