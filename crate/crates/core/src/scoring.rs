//! Event units, two-stage scorer dispatch and frame-level score assembly.
//!
//! Each event is first described (stage 1, with up to 16 sampled frames) and
//! the description is then turned into an anomaly score (stage 2). Stage-2
//! replies are free text; the first number in the reply is taken and clamped
//! to `[0, 1]`.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex, OnceLock};
use std::time::Duration;

use base64::Engine;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const FRAMES_PER_EVENT: usize = 16;
pub const PROMPT_VERSION: &str = "v1";
const DESCRIBE_TEMPLATE: &str = include_str!("../assets/prompts/v1/describe.txt");
const SCORE_TEMPLATE: &str = include_str!("../assets/prompts/v1/score.txt");
pub const UNPARSEABLE: &str = "UNPARSEABLE";
pub const FALLBACK_SCORE: f64 = 0.5;

pub fn describe_prompt() -> &'static str {
    DESCRIBE_TEMPLATE.trim_end()
}

/// Stage-2 prompt with the stage-1 description substituted verbatim.
pub fn score_prompt(description: &str) -> String {
    SCORE_TEMPLATE.trim_end().replace("<D>", description)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventUnit {
    pub index: usize,
    pub start: usize,
    /// Exclusive.
    pub end: usize,
    pub sampled_frames: Vec<usize>,
}

impl EventUnit {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// `min(budget, end − start)` evenly spaced frames of `[start, end)`.
pub fn sample_frames(start: usize, end: usize, budget: usize) -> Vec<usize> {
    let len = end - start;
    let n = budget.min(len);
    (0..n).map(|k| start + k * len / n).collect()
}

/// Splits `[0, total)` at the given boundaries. Panics unless the boundaries
/// are strictly increasing and inside `(0, total)`.
pub fn events_from_boundaries(total: usize, boundaries: &[usize]) -> Vec<EventUnit> {
    let mut edges = Vec::with_capacity(boundaries.len() + 2);
    edges.push(0);
    edges.extend_from_slice(boundaries);
    edges.push(total);
    assert!(
        edges.windows(2).all(|e| e[0] < e[1]),
        "boundaries must be strictly increasing inside (0, {total})"
    );
    edges
        .windows(2)
        .enumerate()
        .map(|(index, e)| EventUnit {
            index,
            start: e[0],
            end: e[1],
            sampled_frames: sample_frames(e[0], e[1], FRAMES_PER_EVENT),
        })
        .collect()
}

fn number_pattern() -> &'static Regex {
    static PATTERN: OnceLock<Regex> = OnceLock::new();
    PATTERN.get_or_init(|| {
        Regex::new(r"[-+]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][-+]?\d+)?").expect("valid pattern")
    })
}

/// First number in a free-text reply.
pub fn parse_score(reply: &str) -> Option<f64> {
    number_pattern()
        .find_iter(reply)
        .filter_map(|m| m.as_str().parse::<f64>().ok())
        .find(|v| v.is_finite())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescribeRequest {
    pub video_id: String,
    pub event_index: usize,
    pub start_frame: usize,
    pub end_frame: usize,
    /// Base64-encoded JPEG images.
    pub frames: Vec<String>,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub video_id: String,
    pub event_index: usize,
    pub description: String,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct TransportError(pub String);

/// A describe-then-score backend. Implementations must tolerate concurrent calls.
pub trait EventScorer: Send + Sync {
    /// Stage 1: free-text description of the event.
    fn describe(&self, request: &DescribeRequest) -> Result<String, TransportError>;
    /// Stage 2: raw reply expected to contain a score.
    fn score(&self, request: &ScoreRequest) -> Result<String, TransportError>;
}

/// Supplies encoded frame images for an event.
pub trait FrameSource: Send + Sync {
    fn frames(&self, video_id: &str, indices: &[usize]) -> Result<Vec<Vec<u8>>, String>;
}

/// Sends no images; for scorers that do not look at pixels.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoFrames;

impl FrameSource for NoFrames {
    fn frames(&self, _: &str, _: &[usize]) -> Result<Vec<Vec<u8>>, String> {
        Ok(Vec::new())
    }
}

/// Reads `{root}/{index:06}.jpg`.
#[derive(Debug, Clone)]
pub struct FrameDirectory {
    pub root: PathBuf,
}

impl FrameDirectory {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn frame_path(&self, index: usize) -> PathBuf {
        self.root.join(format!("{index:06}.jpg"))
    }
}

impl FrameSource for FrameDirectory {
    fn frames(&self, _: &str, indices: &[usize]) -> Result<Vec<Vec<u8>>, String> {
        indices
            .iter()
            .map(|&i| {
                let path = self.frame_path(i);
                std::fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))
            })
            .collect()
    }
}

/// Caps the number of scorer requests in flight across every thread sharing it.
#[derive(Debug)]
pub struct InflightLimiter {
    max: usize,
    current: Mutex<usize>,
    freed: Condvar,
}

pub struct InflightPermit<'a> {
    limiter: &'a InflightLimiter,
}

impl InflightLimiter {
    pub fn new(max: usize) -> Self {
        assert!(max > 0, "in-flight limit must be positive");
        Self {
            max,
            current: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn max(&self) -> usize {
        self.max
    }

    pub fn acquire(&self) -> InflightPermit<'_> {
        let mut current = self.current.lock().unwrap();
        while *current >= self.max {
            current = self.freed.wait(current).unwrap();
        }
        *current += 1;
        InflightPermit { limiter: self }
    }
}

impl Drop for InflightPermit<'_> {
    fn drop(&mut self) {
        *self.limiter.current.lock().unwrap() -= 1;
        self.limiter.freed.notify_one();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoringOptions {
    /// Extra attempts after a transport failure or an unparseable reply.
    pub max_retries: usize,
    /// Events of one video scored concurrently.
    pub inflight: usize,
}

impl Default for ScoringOptions {
    fn default() -> Self {
        Self {
            max_retries: 3,
            inflight: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventScore {
    pub description: String,
    pub score: f64,
    /// Stage-2 attempts used.
    pub attempts: usize,
    pub unparseable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub index: usize,
    pub start: usize,
    pub end: usize,
    pub score: f64,
    pub description: String,
}

impl EventRecord {
    pub fn new(unit: &EventUnit, score: &EventScore) -> Self {
        Self {
            index: unit.index,
            start: unit.start,
            end: unit.end,
            score: score.score,
            description: score.description.clone(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("scorer unavailable at event {failed_event}: {message}")]
    Unavailable {
        message: String,
        failed_event: usize,
        /// Events finished before the failure, in index order.
        completed: Vec<EventRecord>,
    },
    #[error("cannot load frames for event {event}: {message}")]
    Media { event: usize, message: String },
}

fn with_retries<T>(
    max_retries: usize,
    limiter: &InflightLimiter,
    mut call: impl FnMut() -> Result<T, TransportError>,
) -> Result<T, TransportError> {
    let mut last = None;
    for _ in 0..=max_retries {
        let _permit = limiter.acquire();
        match call() {
            Ok(v) => return Ok(v),
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Transport failure while scoring one event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventFailure {
    Transport(String),
    Media(String),
}

/// Runs both stages for one event.
pub fn score_event(
    video_id: &str,
    event: &EventUnit,
    media: &dyn FrameSource,
    scorer: &dyn EventScorer,
    max_retries: usize,
    limiter: &InflightLimiter,
) -> Result<EventScore, EventFailure> {
    let images = media
        .frames(video_id, &event.sampled_frames)
        .map_err(EventFailure::Media)?;
    let engine = base64::engine::general_purpose::STANDARD;
    let describe = DescribeRequest {
        video_id: video_id.to_string(),
        event_index: event.index,
        start_frame: event.start,
        end_frame: event.end,
        frames: images.iter().map(|b| engine.encode(b)).collect(),
        prompt: describe_prompt().to_string(),
    };
    let description = with_retries(max_retries, limiter, || scorer.describe(&describe))
        .map_err(|e| EventFailure::Transport(e.0))?;
    let request = ScoreRequest {
        video_id: video_id.to_string(),
        event_index: event.index,
        prompt: score_prompt(&description),
        description,
    };
    for attempt in 1..=max_retries + 1 {
        let reply = with_retries(max_retries, limiter, || scorer.score(&request))
            .map_err(|e| EventFailure::Transport(e.0))?;
        if let Some(value) = parse_score(&reply) {
            return Ok(EventScore {
                description: request.description,
                score: value.clamp(0.0, 1.0),
                attempts: attempt,
                unparseable: false,
            });
        }
    }
    Ok(EventScore {
        description: UNPARSEABLE.to_string(),
        score: FALLBACK_SCORE,
        attempts: max_retries + 1,
        unparseable: true,
    })
}

/// Scores every event with up to `opts.inflight` worker threads. Results are in
/// event order. On the first failure no new events are started and the ones
/// already finished are returned inside the error.
pub fn score_events(
    video_id: &str,
    events: &[EventUnit],
    media: &dyn FrameSource,
    scorer: &dyn EventScorer,
    opts: &ScoringOptions,
    limiter: &InflightLimiter,
) -> Result<Vec<EventScore>, ScoringError> {
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let results: Mutex<Vec<Option<EventScore>>> = Mutex::new(vec![None; events.len()]);
    let failure: Mutex<Option<(usize, EventFailure)>> = Mutex::new(None);
    let workers = opts.inflight.clamp(1, events.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(event) = events.get(i) else { break };
                match score_event(video_id, event, media, scorer, opts.max_retries, limiter) {
                    Ok(s) => results.lock().unwrap()[i] = Some(s),
                    Err(e) => {
                        stop.store(true, Ordering::SeqCst);
                        let mut slot = failure.lock().unwrap();
                        if slot.as_ref().is_none_or(|(j, _)| i < *j) {
                            *slot = Some((i, e));
                        }
                    }
                }
            });
        }
    });
    let results = results.into_inner().unwrap();
    match failure.into_inner().unwrap() {
        None => Ok(results
            .into_iter()
            .map(|s| s.expect("every event scored"))
            .collect()),
        Some((i, EventFailure::Media(message))) => Err(ScoringError::Media { event: i, message }),
        Some((i, EventFailure::Transport(message))) => Err(ScoringError::Unavailable {
            message,
            failed_event: i,
            completed: events
                .iter()
                .zip(&results)
                .filter_map(|(u, s)| s.as_ref().map(|s| EventRecord::new(u, s)))
                .collect(),
        }),
    }
}

/// Piecewise-constant frame scores from `(start, end, score)` spans. Panics
/// unless the spans tile `[0, total)` in order.
pub fn assemble_frame_scores(spans: &[(usize, usize, f64)], total: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(total);
    for &(start, end, score) in spans {
        assert_eq!(
            start,
            out.len(),
            "events must tile the video without gaps or overlaps"
        );
        assert!(end > start, "empty event [{start}, {end})");
        out.resize(end, score);
    }
    assert_eq!(out.len(), total, "events must cover all {total} frames");
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub attention: u64,
    pub flow_projector: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub video_id: String,
    pub fps: f32,
    /// Resolved configuration this result was produced with.
    pub config: serde_json::Value,
    pub seeds: Seeds,
    pub prompt_version: String,
    pub events: Vec<EventRecord>,
    pub frame_scores: Vec<f64>,
    /// Indices of events whose score fell back after unparseable replies.
    pub unparseable_events: Vec<usize>,
}

impl DetectionResult {
    pub fn new(
        video_id: &str,
        fps: f32,
        total_frames: usize,
        config: serde_json::Value,
        seeds: Seeds,
        units: &[EventUnit],
        scores: &[EventScore],
    ) -> Self {
        let events: Vec<EventRecord> = units
            .iter()
            .zip(scores)
            .map(|(u, s)| EventRecord::new(u, s))
            .collect();
        let spans: Vec<(usize, usize, f64)> =
            events.iter().map(|e| (e.start, e.end, e.score)).collect();
        Self {
            video_id: video_id.to_string(),
            fps,
            config,
            seeds,
            prompt_version: PROMPT_VERSION.to_string(),
            frame_scores: assemble_frame_scores(&spans, total_frames),
            unparseable_events: units
                .iter()
                .zip(scores)
                .filter(|(_, s)| s.unparseable)
                .map(|(u, _)| u.index)
                .collect(),
            events,
        }
    }
}

/// Written instead of a result when the scorer goes away mid-video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialReport {
    pub video_id: String,
    pub error: String,
    pub failed_event: usize,
    pub completed: Vec<EventRecord>,
}

/// Canned reply for one event span of the mock scorer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockFixture {
    /// Applies to every video when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub video: Option<String>,
    pub start: usize,
    pub end: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    /// Raw stage-2 reply; takes precedence over `score`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum FixtureFile {
    List(Vec<MockFixture>),
    Wrapped { events: Vec<MockFixture> },
}

/// Parses either a JSON list of fixtures or `{"events": [...]}`.
pub fn parse_fixtures(text: &str) -> Result<Vec<MockFixture>, serde_json::Error> {
    Ok(match serde_json::from_str(text)? {
        FixtureFile::List(v) | FixtureFile::Wrapped { events: v } => v,
    })
}

/// Score in `[0, 1)` derived from a hash of the event span.
pub fn hashed_score(video_id: &str, start: usize, end: usize) -> f64 {
    let digest = Sha256::digest(format!("{video_id}:{start}:{end}").as_bytes());
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    let unit = (u64::from_be_bytes(head) >> 11) as f64 / (1u64 << 53) as f64;
    (unit * 1e4).floor() / 1e4
}

/// Deterministic in-process scorer for tests and offline runs.
///
/// Events without a fixture get [`hashed_score`]. The mock also records how
/// many requests were in flight at once.
#[derive(Debug, Default)]
pub struct MockScorer {
    fixtures: Vec<MockFixture>,
    spans: Mutex<HashMap<(String, usize), (usize, usize)>>,
    delay: Duration,
    fail_after: Option<usize>,
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    peak: AtomicUsize,
}

struct FlightGuard<'a>(&'a AtomicUsize);

impl Drop for FlightGuard<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

impl MockScorer {
    pub fn new(fixtures: Vec<MockFixture>) -> Self {
        Self {
            fixtures,
            ..Self::default()
        }
    }

    /// Sleeps this long inside every request.
    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }

    /// Every request after the first `n` fails with a transport error.
    pub fn failing_after(mut self, n: usize) -> Self {
        self.fail_after = Some(n);
        self
    }

    pub fn peak_in_flight(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn enter(&self) -> Result<FlightGuard<'_>, TransportError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        if self.fail_after.is_some_and(|limit| n >= limit) {
            return Err(TransportError("mock scorer is down".into()));
        }
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        if !self.delay.is_zero() {
            std::thread::sleep(self.delay);
        }
        Ok(FlightGuard(&self.in_flight))
    }

    fn fixture(&self, video_id: &str, start: usize, end: usize) -> Option<&MockFixture> {
        let matches = |f: &&MockFixture| f.start == start && f.end == end;
        self.fixtures
            .iter()
            .filter(matches)
            .find(|f| f.video.as_deref() == Some(video_id))
            .or_else(|| {
                self.fixtures
                    .iter()
                    .filter(matches)
                    .find(|f| f.video.is_none())
            })
    }
}

impl EventScorer for MockScorer {
    fn describe(&self, request: &DescribeRequest) -> Result<String, TransportError> {
        let _guard = self.enter()?;
        let (start, end) = (request.start_frame, request.end_frame);
        self.spans.lock().unwrap().insert(
            (request.video_id.clone(), request.event_index),
            (start, end),
        );
        Ok(self
            .fixture(&request.video_id, start, end)
            .and_then(|f| f.description.clone())
            .unwrap_or_else(|| format!("frames {start} to {end} of {}", request.video_id)))
    }

    fn score(&self, request: &ScoreRequest) -> Result<String, TransportError> {
        let _guard = self.enter()?;
        let span = self
            .spans
            .lock()
            .unwrap()
            .get(&(request.video_id.clone(), request.event_index))
            .copied();
        let Some((start, end)) = span else {
            return Err(TransportError(format!(
                "score requested before describe for event {}",
                request.event_index
            )));
        };
        let fixture = self.fixture(&request.video_id, start, end);
        if let Some(reply) = fixture.and_then(|f| f.reply.clone()) {
            return Ok(reply);
        }
        let score = fixture
            .and_then(|f| f.score)
            .unwrap_or_else(|| hashed_score(&request.video_id, start, end));
        Ok(score.to_string())
    }
}

/// Client for a scorer service exposing `POST /v1/describe` and `POST /v1/score`.
#[derive(Debug, Clone)]
pub struct HttpScorer {
    base: String,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct DescribeResponse {
    description: String,
}

#[derive(Deserialize)]
struct ScoreResponse {
    score: serde_json::Value,
}

impl HttpScorer {
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            base: base_url.trim_end_matches('/').to_string(),
            agent,
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn post<T: serde::de::DeserializeOwned>(
        &self,
        path: &str,
        body: &impl Serialize,
    ) -> Result<T, TransportError> {
        let url = format!("{}{path}", self.base);
        let mut response = self
            .agent
            .post(&url)
            .send_json(body)
            .map_err(|e| TransportError(format!("POST {url}: {e}")))?;
        response
            .body_mut()
            .read_json()
            .map_err(|e| TransportError(format!("POST {url}: bad response body: {e}")))
    }
}

impl EventScorer for HttpScorer {
    fn describe(&self, request: &DescribeRequest) -> Result<String, TransportError> {
        Ok(self
            .post::<DescribeResponse>("/v1/describe", request)?
            .description)
    }

    fn score(&self, request: &ScoreRequest) -> Result<String, TransportError> {
        match self.post::<ScoreResponse>("/v1/score", request)?.score {
            serde_json::Value::Number(n) => Ok(n.to_string()),
            serde_json::Value::String(s) => Ok(s),
            other => Ok(other.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn events_from_boundaries_examples() {
        let one = events_from_boundaries(100, &[]);
        assert_eq!((one.len(), one[0].start, one[0].end), (1, 0, 100));
        let two = events_from_boundaries(100, &[40]);
        let spans: Vec<_> = two.iter().map(|e| (e.start, e.end)).collect();
        assert_eq!(spans, vec![(0, 40), (40, 100)]);
        let three = events_from_boundaries(10, &[3, 7]);
        let spans: Vec<_> = three.iter().map(|e| (e.start, e.end)).collect();
        assert_eq!(spans, vec![(0, 3), (3, 7), (7, 10)]);
        assert_eq!(three[0].sampled_frames, vec![0, 1, 2]);
    }

    #[test]
    fn sampling_is_uniform_and_capped() {
        let s = sample_frames(0, 160, 16);
        assert_eq!(s.len(), 16);
        assert_eq!(s[..3], [0, 10, 20]);
        assert_eq!(sample_frames(5, 9, 16), vec![5, 6, 7, 8]);
        let s = sample_frames(100, 133, 16);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert!(s.iter().all(|&f| (100..133).contains(&f)));
    }

    #[test]
    #[should_panic]
    fn unsorted_boundaries_panic() {
        events_from_boundaries(10, &[7, 3]);
    }

    #[test]
    fn parse_first_number() {
        assert_eq!(parse_score("Score: 1.4"), Some(1.4));
        assert_eq!(parse_score("0.7"), Some(0.7));
        assert_eq!(parse_score("about .25 or 0.3"), Some(0.25));
        assert_eq!(parse_score("-0.2 maybe"), Some(-0.2));
        assert_eq!(parse_score("no digits here"), None);
    }

    #[test]
    fn prompts() {
        assert_eq!(
            describe_prompt(),
            "Describe the surface and latent semantic content of these frames."
        );
        assert_eq!(
            score_prompt("a car stops"),
            "Given this description: a car stops. Output only an anomaly score between 0 and 1."
        );
    }

    fn unit(start: usize, end: usize) -> EventUnit {
        EventUnit {
            index: 0,
            start,
            end,
            sampled_frames: sample_frames(start, end, FRAMES_PER_EVENT),
        }
    }

    fn fixture(start: usize, end: usize, score: Option<f64>, reply: Option<&str>) -> MockFixture {
        MockFixture {
            video: None,
            start,
            end,
            score,
            reply: reply.map(str::to_string),
            description: None,
        }
    }

    fn run(scorer: &MockScorer, event: &EventUnit) -> EventScore {
        score_event("v", event, &NoFrames, scorer, 3, &InflightLimiter::new(4)).unwrap()
    }

    #[test]
    fn fixture_passthrough() {
        let mock = MockScorer::new(vec![fixture(0, 40, Some(0.9), None)]);
        let s = run(&mock, &unit(0, 40));
        assert_eq!((s.score, s.attempts, s.unparseable), (0.9, 1, false));
    }

    #[test]
    fn out_of_range_reply_is_clamped() {
        let mock = MockScorer::new(vec![fixture(0, 40, None, Some("Score: 1.4"))]);
        assert_eq!(run(&mock, &unit(0, 40)).score, 1.0);
        let mock = MockScorer::new(vec![fixture(0, 40, None, Some("-3"))]);
        assert_eq!(run(&mock, &unit(0, 40)).score, 0.0);
    }

    #[test]
    fn prose_reply_falls_back() {
        let mock = MockScorer::new(vec![fixture(0, 40, None, Some("looks quite normal"))]);
        let s = run(&mock, &unit(0, 40));
        assert_eq!(s.score, FALLBACK_SCORE);
        assert_eq!(s.description, UNPARSEABLE);
        assert_eq!(s.attempts, 4);
        assert!(s.unparseable);
        // One describe plus four score attempts.
        assert_eq!(mock.calls(), 5);
    }

    #[test]
    fn video_specific_fixture_wins() {
        let mut specific = fixture(0, 40, Some(0.1), None);
        specific.video = Some("v".into());
        let mock = MockScorer::new(vec![fixture(0, 40, Some(0.9), None), specific]);
        assert_eq!(run(&mock, &unit(0, 40)).score, 0.1);
    }

    #[test]
    fn hashed_scores_are_stable() {
        let a = hashed_score("v", 0, 40);
        assert_eq!(a, hashed_score("v", 0, 40));
        assert!((0.0..1.0).contains(&a));
        assert_ne!(a, hashed_score("v", 0, 41));
    }

    #[test]
    fn fixtures_parse_in_both_shapes() {
        let list = parse_fixtures(r#"[{"start":0,"end":40,"score":0.9}]"#).unwrap();
        let wrapped = parse_fixtures(r#"{"events":[{"start":0,"end":40,"score":0.9}]}"#).unwrap();
        assert_eq!(list, wrapped);
        assert_eq!(list[0].score, Some(0.9));
    }

    #[test]
    fn assemble_examples() {
        assert_eq!(assemble_frame_scores(&[(0, 5, 0.3)], 5), vec![0.3; 5]);
        assert_eq!(
            assemble_frame_scores(&[(0, 2, 0.1), (2, 4, 0.9)], 4),
            vec![0.1, 0.1, 0.9, 0.9]
        );
    }

    #[test]
    #[should_panic(expected = "tile")]
    fn assemble_rejects_gaps() {
        assemble_frame_scores(&[(0, 2, 0.1), (3, 4, 0.9)], 4);
    }

    #[test]
    fn inflight_bound_is_respected() {
        let events = events_from_boundaries(400, &[40, 80, 120, 160, 200, 240, 280, 320, 360]);
        let mock = MockScorer::default().with_delay(Duration::from_millis(5));
        let opts = ScoringOptions {
            max_retries: 3,
            inflight: 8,
        };
        let limiter = InflightLimiter::new(3);
        let scores = score_events("v", &events, &NoFrames, &mock, &opts, &limiter).unwrap();
        assert_eq!(scores.len(), 10);
        assert!(mock.peak_in_flight() <= 3);
        assert!(mock.peak_in_flight() >= 2);
    }

    #[test]
    fn outage_reports_completed_events() {
        let events = events_from_boundaries(100, &[20, 40, 60, 80]);
        // Each event takes two requests; the third event's describe is the fifth call.
        let mock = MockScorer::default().failing_after(4);
        let opts = ScoringOptions {
            max_retries: 2,
            inflight: 1,
        };
        let err = score_events(
            "v",
            &events,
            &NoFrames,
            &mock,
            &opts,
            &InflightLimiter::new(1),
        )
        .unwrap_err();
        match err {
            ScoringError::Unavailable {
                failed_event,
                completed,
                ..
            } => {
                assert_eq!(failed_event, 2);
                let done: Vec<usize> = completed.iter().map(|e| e.index).collect();
                assert_eq!(done, vec![0, 1]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_frames_are_reported() {
        let dir = FrameDirectory::new("/nonexistent/frames");
        let mock = MockScorer::default();
        let err = score_event("v", &unit(0, 3), &dir, &mock, 0, &InflightLimiter::new(1));
        assert!(matches!(err, Err(EventFailure::Media(m)) if m.contains("000000.jpg")));
    }

    #[test]
    fn detection_result_tiles_frames() {
        let units = events_from_boundaries(10, &[4]);
        let scores = vec![
            EventScore {
                description: "a".into(),
                score: 0.2,
                attempts: 1,
                unparseable: false,
            },
            EventScore {
                description: UNPARSEABLE.into(),
                score: 0.5,
                attempts: 4,
                unparseable: true,
            },
        ];
        let seeds = Seeds {
            attention: 0,
            flow_projector: 0,
        };
        let r = DetectionResult::new("v", 30.0, 10, serde_json::json!({}), seeds, &units, &scores);
        assert_eq!(r.frame_scores[..4], [0.2; 4]);
        assert_eq!(r.frame_scores[4..], [0.5; 6]);
        assert_eq!(r.unparseable_events, vec![1]);
    }
}
