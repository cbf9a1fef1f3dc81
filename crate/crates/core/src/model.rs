//! Text-generation client with retries, a bound on in-flight calls and
//! record/replay transcripts.
//!
//! Every request carries a call tag `role:hash:index`, where `hash` is the
//! first 16 hex digits of the prompt's SHA-256 and `index` distinguishes
//! repeated identical prompts. In replay mode the response is looked up by
//! tag, so a pipeline run against a transcript is a pure function of its
//! inputs.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelRole {
    Planner,
    Summarizer,
    Discriminator,
}

impl ModelRole {
    pub const ALL: [ModelRole; 3] = [ModelRole::Planner, ModelRole::Summarizer, ModelRole::Discriminator];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelRole::Planner => "planner",
            ModelRole::Summarizer => "summarizer",
            ModelRole::Discriminator => "discriminator",
        }
    }
}

impl fmt::Display for ModelRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// First 16 hex digits of the SHA-256 of `text`.
pub fn content_hash(text: &str) -> String {
    hex::encode(&Sha256::digest(text.as_bytes())[..8])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRequest {
    pub role: ModelRole,
    pub prompt_text: String,
    pub temperature: f64,
    pub call_index: u64,
}

impl ModelRequest {
    pub fn new(role: ModelRole, prompt_text: impl Into<String>, call_index: u64) -> Self {
        ModelRequest {
            role,
            prompt_text: prompt_text.into(),
            temperature: 0.0,
            call_index,
        }
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn call_tag(&self) -> String {
        format!("{}:{}:{}", self.role, content_hash(&self.prompt_text), self.call_index)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelResponse {
    pub text: String,
    pub latency: Duration,
    /// 1-based attempt that succeeded.
    pub attempt: u32,
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model call failed after {attempts} attempt(s){}: {message}", status.map(|s| format!(" (status {s})")).unwrap_or_default())]
    Failed {
        status: Option<u16>,
        attempts: u32,
        message: String,
    },
    #[error("no transcript entry for call tag `{0}`")]
    TranscriptMiss(String),
    #[error("transcript {path}: {reason}")]
    Transcript { path: PathBuf, reason: String },
}

/// A single failed transport attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportError {
    pub status: Option<u16>,
    pub message: String,
    pub retryable: bool,
}

impl TransportError {
    pub fn retryable(status: Option<u16>, message: impl Into<String>) -> Self {
        TransportError {
            status,
            message: message.into(),
            retryable: true,
        }
    }

    pub fn fatal(status: Option<u16>, message: impl Into<String>) -> Self {
        TransportError {
            status,
            message: message.into(),
            retryable: false,
        }
    }
}

/// Something that turns a request into text: an HTTP endpoint, a scripted
/// stub, a deterministic simulator.
pub trait Transport: Send + Sync {
    fn send(&self, request: &ModelRequest) -> Result<String, TransportError>;
}

/// Adapts a closure into a [`Transport`].
pub struct FnTransport<F>(pub F);

impl<F> Transport for FnTransport<F>
where
    F: Fn(&ModelRequest) -> Result<String, TransportError> + Send + Sync,
{
    fn send(&self, request: &ModelRequest) -> Result<String, TransportError> {
        (self.0)(request)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TranscriptEntry {
    call_tag: String,
    text: String,
}

/// Newline-delimited `{"call_tag": ..., "text": ...}` records.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transcript {
    entries: BTreeMap<String, String>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, call_tag: impl Into<String>, text: impl Into<String>) {
        self.entries.insert(call_tag.into(), text.into());
    }

    pub fn get(&self, call_tag: &str) -> Option<&str> {
        self.entries.get(call_tag).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Later lines win when a tag repeats.
    pub fn parse(text: &str) -> Result<Transcript, String> {
        let mut t = Transcript::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e: TranscriptEntry = serde_json::from_str(line).map_err(|e| format!("line {}: {e}", i + 1))?;
            t.entries.insert(e.call_tag, e.text);
        }
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Transcript, ModelError> {
        let text = fs::read_to_string(path).map_err(|e| ModelError::Transcript {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Transcript::parse(&text).map_err(|reason| ModelError::Transcript {
            path: path.to_path_buf(),
            reason,
        })
    }

    /// Entries sorted by tag, one JSON object per line.
    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for (call_tag, text) in &self.entries {
            let e = TranscriptEntry {
                call_tag: call_tag.clone(),
                text: text.clone(),
            };
            out.push_str(&serde_json::to_string(&e).expect("entry serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        fs::write(path, self.to_ndjson()).map_err(|e| ModelError::Transcript {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    /// Delay before the first retry; doubled for each subsequent one.
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn immediate() -> Self {
        RetryPolicy {
            base_delay: Duration::ZERO,
            ..Default::default()
        }
    }
}

/// Counting semaphore over a mutex and condition variable.
struct InFlight {
    limit: usize,
    current: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn new(limit: usize) -> Self {
        InFlight {
            limit: limit.max(1),
            current: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.current.lock().unwrap();
        while *n >= self.limit {
            n = self.freed.wait(n).unwrap();
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.current.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

enum Mode {
    Live(Arc<dyn Transport>),
    Replay(Transcript),
    Record {
        transport: Arc<dyn Transport>,
        recorded: Mutex<Transcript>,
    },
}

pub struct ModelClient {
    mode: Mode,
    in_flight: InFlight,
    retry: RetryPolicy,
}

impl fmt::Debug for ModelClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mode = match &self.mode {
            Mode::Live(_) => "live",
            Mode::Replay(_) => "replay",
            Mode::Record { .. } => "record",
        };
        f.debug_struct("ModelClient")
            .field("mode", &mode)
            .field("max_in_flight", &self.in_flight.limit)
            .field("retry", &self.retry)
            .finish()
    }
}

pub const DEFAULT_MAX_IN_FLIGHT: usize = 8;

impl ModelClient {
    fn with_mode(mode: Mode) -> Self {
        ModelClient {
            mode,
            in_flight: InFlight::new(DEFAULT_MAX_IN_FLIGHT),
            retry: RetryPolicy::default(),
        }
    }

    pub fn live(transport: Arc<dyn Transport>) -> Self {
        Self::with_mode(Mode::Live(transport))
    }

    pub fn replay(transcript: Transcript) -> Self {
        Self::with_mode(Mode::Replay(transcript))
    }

    pub fn replay_file(path: &Path) -> Result<Self, ModelError> {
        Ok(Self::replay(Transcript::load(path)?))
    }

    /// Live calls whose responses are also kept for [`ModelClient::recorded`].
    pub fn record(transport: Arc<dyn Transport>) -> Self {
        Self::with_mode(Mode::Record {
            transport,
            recorded: Mutex::new(Transcript::new()),
        })
    }

    pub fn with_max_in_flight(mut self, limit: usize) -> Self {
        self.in_flight = InFlight::new(limit);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn is_replay(&self) -> bool {
        matches!(self.mode, Mode::Replay(_))
    }

    /// Responses captured so far in record mode.
    pub fn recorded(&self) -> Option<Transcript> {
        match &self.mode {
            Mode::Record { recorded, .. } => Some(recorded.lock().unwrap().clone()),
            _ => None,
        }
    }

    pub fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, ModelError> {
        match &self.mode {
            Mode::Replay(t) => {
                let tag = request.call_tag();
                t.get(&tag)
                    .map(|text| ModelResponse {
                        text: text.to_string(),
                        latency: Duration::ZERO,
                        attempt: 1,
                    })
                    .ok_or(ModelError::TranscriptMiss(tag))
            }
            Mode::Live(transport) => self.call(transport.as_ref(), request),
            Mode::Record { transport, recorded } => {
                let response = self.call(transport.as_ref(), request)?;
                recorded.lock().unwrap().insert(request.call_tag(), response.text.clone());
                Ok(response)
            }
        }
    }

    fn call(&self, transport: &dyn Transport, request: &ModelRequest) -> Result<ModelResponse, ModelError> {
        let started = Instant::now();
        let mut attempt = 0;
        loop {
            attempt += 1;
            let result = {
                let _permit = self.in_flight.acquire();
                transport.send(request)
            };
            match result {
                Ok(text) => {
                    return Ok(ModelResponse {
                        text,
                        latency: started.elapsed(),
                        attempt,
                    })
                }
                Err(e) if e.retryable && attempt <= self.retry.max_retries => {
                    std::thread::sleep(self.retry.base_delay * 2u32.pow(attempt - 1));
                }
                Err(e) => {
                    return Err(ModelError::Failed {
                        status: e.status,
                        attempts: attempt,
                        message: e.message,
                    })
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicUsize, Ordering};

    use super::*;
    use crate::par::Execution;

    fn echo() -> Arc<dyn Transport> {
        Arc::new(FnTransport(|r: &ModelRequest| Ok(format!("echo {}", r.call_index))))
    }

    #[test]
    fn call_tags_distinguish_role_prompt_and_index() {
        let a = ModelRequest::new(ModelRole::Planner, "p", 0);
        assert_eq!(a.call_tag(), format!("planner:{}:0", content_hash("p")));
        assert_eq!(content_hash("p").len(), 16);
        assert_ne!(a.call_tag(), ModelRequest::new(ModelRole::Planner, "p", 1).call_tag());
        assert_ne!(a.call_tag(), ModelRequest::new(ModelRole::Summarizer, "p", 0).call_tag());
        assert_ne!(a.call_tag(), ModelRequest::new(ModelRole::Planner, "q", 0).call_tag());
    }

    #[test]
    fn replay_looks_up_by_tag() {
        let req = ModelRequest::new(ModelRole::Planner, "plan please", 0);
        let mut t = Transcript::new();
        t.insert(req.call_tag(), "Day 1: ...");
        let client = ModelClient::replay(t);
        assert_eq!(client.complete(&req).unwrap().text, "Day 1: ...");
        let miss = ModelRequest::new(ModelRole::Planner, "plan please", 1);
        assert!(matches!(client.complete(&miss), Err(ModelError::TranscriptMiss(tag)) if tag == miss.call_tag()));
    }

    #[test]
    fn record_then_replay_round_trips() {
        let recorder = ModelClient::record(echo());
        let reqs: Vec<_> = (0..3).map(|i| ModelRequest::new(ModelRole::Discriminator, "score", i)).collect();
        let live: Vec<String> = reqs.iter().map(|r| recorder.complete(r).unwrap().text).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ndjson");
        recorder.recorded().unwrap().save(&path).unwrap();
        let replay = ModelClient::replay_file(&path).unwrap();
        let again: Vec<String> = reqs.iter().map(|r| replay.complete(r).unwrap().text).collect();
        assert_eq!(live, again);
        assert_eq!(live[2], "echo 2");
    }

    #[test]
    fn transcript_ndjson_is_sorted_and_parses_back() {
        let mut t = Transcript::new();
        t.insert("b", "two\nlines");
        t.insert("a", "one");
        let text = t.to_ndjson();
        assert_eq!(text, "{\"call_tag\":\"a\",\"text\":\"one\"}\n{\"call_tag\":\"b\",\"text\":\"two\\nlines\"}\n");
        assert_eq!(Transcript::parse(&text).unwrap(), t);
        assert!(Transcript::parse("{\"call_tag\":\"a\"}").unwrap_err().starts_with("line 1"));
    }

    #[test]
    fn retries_then_succeeds() {
        let calls = AtomicUsize::new(0);
        let flaky = Arc::new(FnTransport(move |_: &ModelRequest| {
            if calls.fetch_add(1, Ordering::SeqCst) < 2 {
                Err(TransportError::retryable(Some(503), "busy"))
            } else {
                Ok("ok".into())
            }
        }));
        let client = ModelClient::live(flaky).with_retry(RetryPolicy::immediate());
        let r = client.complete(&ModelRequest::new(ModelRole::Planner, "x", 0)).unwrap();
        assert_eq!((r.text.as_str(), r.attempt), ("ok", 3));
    }

    #[test]
    fn retries_are_bounded() {
        let calls = Arc::new(AtomicUsize::new(0));
        let seen = calls.clone();
        let down = Arc::new(FnTransport(move |_: &ModelRequest| {
            seen.fetch_add(1, Ordering::SeqCst);
            Err(TransportError::retryable(Some(500), "down"))
        }));
        let client = ModelClient::live(down).with_retry(RetryPolicy::immediate());
        let err = client.complete(&ModelRequest::new(ModelRole::Planner, "x", 0)).unwrap_err();
        assert!(matches!(err, ModelError::Failed { status: Some(500), attempts: 4, .. }));
        assert_eq!(calls.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn fatal_errors_are_not_retried() {
        let bad = Arc::new(FnTransport(|_: &ModelRequest| Err(TransportError::fatal(Some(401), "unauthorized"))));
        let client = ModelClient::live(bad).with_retry(RetryPolicy::immediate());
        let err = client.complete(&ModelRequest::new(ModelRole::Planner, "x", 0)).unwrap_err();
        assert!(matches!(err, ModelError::Failed { attempts: 1, .. }));
    }

    #[test]
    fn in_flight_calls_never_exceed_the_bound() {
        let current = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let (c, p) = (current.clone(), peak.clone());
        let slow = Arc::new(FnTransport(move |_: &ModelRequest| {
            let now = c.fetch_add(1, Ordering::SeqCst) + 1;
            p.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(5));
            c.fetch_sub(1, Ordering::SeqCst);
            Ok(String::new())
        }));
        let client = ModelClient::live(slow).with_max_in_flight(2);
        let reqs: Vec<_> = (0..24).map(|i| ModelRequest::new(ModelRole::Planner, "x", i)).collect();
        std::thread::scope(|s| {
            for chunk in reqs.chunks(3) {
                let client = &client;
                s.spawn(move || Execution::Sequential.map(chunk, |r| client.complete(r).unwrap()));
            }
        });
        assert!(peak.load(Ordering::SeqCst) <= 2);
        assert!(peak.load(Ordering::SeqCst) >= 1);
    }
}
