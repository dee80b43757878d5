//! Headless polling client.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::Serialize;
use tokio::time::MissedTickBehavior;

use crate::gateway::SnapshotDocument;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PollFailure {
    /// Offset from the client's start.
    pub at_ms: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PollReport {
    pub endpoint: String,
    pub polls: usize,
    pub successes: usize,
    pub sequence_trace: Vec<u64>,
    pub latencies_ms: Vec<f64>,
    pub failures: Vec<PollFailure>,
    /// Offset from the client's start at which each sequence was first seen.
    pub first_seen_ms: BTreeMap<u64, f64>,
    pub last_document: Option<SnapshotDocument>,
    #[serde(skip)]
    pub started: Option<Instant>,
}

impl PollReport {
    fn new(endpoint: &str) -> Self {
        Self {
            endpoint: endpoint.to_string(),
            polls: 0,
            successes: 0,
            sequence_trace: Vec::new(),
            latencies_ms: Vec::new(),
            failures: Vec::new(),
            first_seen_ms: BTreeMap::new(),
            last_document: None,
            started: None,
        }
    }

    pub fn is_non_decreasing(&self) -> bool {
        self.sequence_trace.windows(2).all(|w| w[0] <= w[1])
    }

    pub fn distinct_sequences(&self) -> usize {
        self.first_seen_ms.len()
    }

    pub fn max_latency_ms(&self) -> f64 {
        self.latencies_ms.iter().copied().fold(0.0, f64::max)
    }
}

/// When a poll client stops.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PollPlan {
    pub period: Duration,
    pub duration: Duration,
    pub max_polls: Option<usize>,
}

impl PollPlan {
    pub fn timed(period: Duration, duration: Duration) -> Self {
        Self {
            period,
            duration,
            max_polls: None,
        }
    }

    pub fn counted(period: Duration, polls: usize) -> Self {
        Self {
            period,
            duration: Duration::MAX,
            max_polls: Some(polls),
        }
    }
}

pub const POLL_REQUEST_TIMEOUT: Duration = Duration::from_secs(5);

/// Polls `url` every `period` for `duration`. Per-poll failures are recorded,
/// never returned.
pub async fn poll_client(url: &str, period: Duration, duration: Duration) -> PollReport {
    run_poll(&http_client(), url, PollPlan::timed(period, duration)).await
}

pub fn http_client() -> reqwest::Client {
    reqwest::Client::builder()
        .timeout(POLL_REQUEST_TIMEOUT)
        .build()
        .expect("http client")
}

/// One request at a time: the next poll starts no earlier than the next tick
/// after the previous response, so a slow response delays rather than stacks.
pub async fn run_poll(client: &reqwest::Client, url: &str, plan: PollPlan) -> PollReport {
    let mut report = PollReport::new(url);
    let start = Instant::now();
    report.started = Some(start);
    let deadline = start.checked_add(plan.duration);
    let mut ticker = tokio::time::interval(plan.period.max(Duration::from_millis(1)));
    ticker.set_missed_tick_behavior(MissedTickBehavior::Delay);
    loop {
        if plan.max_polls.is_some_and(|m| report.polls >= m) {
            break;
        }
        ticker.tick().await;
        if deadline.is_some_and(|d| Instant::now() >= d) {
            break;
        }
        report.polls += 1;
        let sent = Instant::now();
        let result = fetch_document(client, url).await;
        let done = Instant::now();
        let at_ms = (done - start).as_secs_f64() * 1e3;
        match result {
            Ok(doc) => {
                report.successes += 1;
                report.latencies_ms.push((done - sent).as_secs_f64() * 1e3);
                report.sequence_trace.push(doc.sequence);
                report.first_seen_ms.entry(doc.sequence).or_insert(at_ms);
                report.last_document = Some(doc);
            }
            Err(reason) => report.failures.push(PollFailure { at_ms, reason }),
        }
    }
    report
}

async fn fetch_document(client: &reqwest::Client, url: &str) -> Result<SnapshotDocument, String> {
    let resp = client.get(url).send().await.map_err(|e| format!("request: {e}"))?;
    let status = resp.status();
    if !status.is_success() {
        return Err(format!("status {}", status.as_u16()));
    }
    let body = resp.bytes().await.map_err(|e| format!("body: {e}"))?;
    serde_json::from_slice(&body).map_err(|e| format!("decode: {e}"))
}
