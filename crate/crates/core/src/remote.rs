//! HTTP scoring wire protocol: a batching client with retries and bounded
//! concurrency, plus a reference server that exposes any scorer.
//!
//! Protocol: `POST /score` with body `{"pairs": [{"premise": str,
//! "hypothesis": str}, ...]}` answers `{"labels": [0|1, ...]}` — label 1
//! means entailed, labels align positionally with pairs, content type is
//! `application/json`. `GET /healthz` answers `200 ok`.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::entailment::{EntailmentScorer, ScorePair};
use crate::error::{CoreError, Result};

#[derive(Debug, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub pairs: Vec<ScorePair>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub labels: Vec<u8>,
}

// ---------------------------------------------------------------------------
// Client
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemoteScorerConfig {
    /// Base URL, e.g. `http://127.0.0.1:7878`.
    pub endpoint: String,
    /// Largest number of pairs per request.
    pub max_batch: usize,
    /// Total tries per request (first call + retries).
    pub attempts: u32,
    /// First retry waits this long; later retries double it.
    pub backoff_base_ms: u64,
    /// Concurrent requests across chunks of one `score_pairs` call.
    pub max_in_flight: usize,
    pub timeout_ms: u64,
}

impl RemoteScorerConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        RemoteScorerConfig {
            endpoint: endpoint.into(),
            max_batch: 32,
            attempts: 3,
            backoff_base_ms: 100,
            max_in_flight: 8,
            timeout_ms: 30_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.endpoint.is_empty() {
            return Err(CoreError::Validation("scorer endpoint is empty".into()));
        }
        if self.max_batch < 1 {
            return Err(CoreError::Validation("max_batch must be >= 1".into()));
        }
        if self.attempts < 1 {
            return Err(CoreError::Validation("attempts must be >= 1".into()));
        }
        if self.max_in_flight < 1 {
            return Err(CoreError::Validation("max_in_flight must be >= 1".into()));
        }
        Ok(())
    }
}

/// HTTP client implementing [`EntailmentScorer`] against a scoring endpoint.
pub struct RemoteScorer {
    config: RemoteScorerConfig,
    agent: ureq::Agent,
    score_url: String,
}

impl RemoteScorer {
    pub fn new(config: RemoteScorerConfig) -> Result<Self> {
        config.validate()?;
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build();
        let score_url = format!("{}/score", config.endpoint.trim_end_matches('/'));
        Ok(RemoteScorer { config, agent, score_url })
    }

    pub fn endpoint(&self) -> &str {
        &self.config.endpoint
    }

    /// Score one chunk (≤ max_batch pairs) with retry + exponential backoff.
    /// Transport failures and non-2xx responses retry; a 2xx response that
    /// violates the protocol shape fails immediately.
    fn score_chunk(&self, chunk: &[ScorePair]) -> Result<Vec<Label>> {
        debug_assert!(chunk.len() <= self.config.max_batch);
        let request = ScoreRequest { pairs: chunk.to_vec() };
        let mut last_error = String::new();
        for attempt in 0..self.config.attempts {
            if attempt > 0 {
                let wait = self.config.backoff_base_ms << (attempt - 1);
                std::thread::sleep(Duration::from_millis(wait));
            }
            match self.agent.post(&self.score_url).send_json(&request) {
                Ok(response) => {
                    let parsed: ScoreResponse = response.into_json().map_err(|e| {
                        CoreError::Protocol(format!("malformed score response: {e}"))
                    })?;
                    if parsed.labels.len() != chunk.len() {
                        return Err(CoreError::Protocol(format!(
                            "scorer returned {} labels for {} pairs",
                            parsed.labels.len(),
                            chunk.len()
                        )));
                    }
                    return parsed
                        .labels
                        .into_iter()
                        .map(|l| match l {
                            0 => Ok(Label::NotEntailed),
                            1 => Ok(Label::Entailed),
                            other => Err(CoreError::Protocol(format!(
                                "label {other} outside {{0, 1}}"
                            ))),
                        })
                        .collect();
                }
                Err(ureq::Error::Status(code, _)) => {
                    last_error = format!("http status {code}");
                }
                Err(transport) => {
                    last_error = transport.to_string();
                }
            }
        }
        Err(CoreError::ScorerUnavailable {
            attempts: self.config.attempts,
            message: last_error,
        })
    }
}

impl EntailmentScorer for RemoteScorer {
    /// Splits `pairs` into ≤ max_batch chunks, runs up to max_in_flight
    /// requests concurrently, and reassembles labels in input order. An
    /// empty input returns without touching the network.
    fn score_pairs(&self, pairs: &[ScorePair]) -> Result<Vec<Label>> {
        if pairs.is_empty() {
            return Ok(Vec::new());
        }
        let chunks: Vec<&[ScorePair]> = pairs.chunks(self.config.max_batch).collect();
        let results: Vec<Mutex<Option<Result<Vec<Label>>>>> =
            chunks.iter().map(|_| Mutex::new(None)).collect();
        let workers = self.config.max_in_flight.min(chunks.len());
        if workers <= 1 {
            for (i, chunk) in chunks.iter().enumerate() {
                *results[i].lock().unwrap() = Some(self.score_chunk(chunk));
            }
        } else {
            let next = AtomicUsize::new(0);
            std::thread::scope(|scope| {
                for _ in 0..workers {
                    scope.spawn(|| loop {
                        let i = next.fetch_add(1, Ordering::SeqCst);
                        if i >= chunks.len() {
                            break;
                        }
                        let outcome = self.score_chunk(chunks[i]);
                        *results[i].lock().unwrap() = Some(outcome);
                    });
                }
            });
        }
        let mut labels = Vec::with_capacity(pairs.len());
        for slot in results {
            let outcome = slot
                .into_inner()
                .unwrap()
                .expect("every chunk is scored exactly once");
            labels.extend(outcome?);
        }
        Ok(labels)
    }
}

// ---------------------------------------------------------------------------
// Server
// ---------------------------------------------------------------------------

/// Reference scoring server: wraps any [`EntailmentScorer`] behind the wire
/// protocol. Stops (and joins its thread) on drop.
pub struct ScoreServer {
    addr: SocketAddr,
    server: Arc<tiny_http::Server>,
    handle: Option<std::thread::JoinHandle<()>>,
}

fn json_response(status: u16, body: String) -> tiny_http::Response<std::io::Cursor<Vec<u8>>> {
    let header = tiny_http::Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..])
        .expect("static header");
    tiny_http::Response::from_string(body)
        .with_status_code(status)
        .with_header(header)
}

fn handle_request(request: &mut tiny_http::Request, scorer: &dyn EntailmentScorer) -> tiny_http::Response<std::io::Cursor<Vec<u8>>> {
    let url = request.url().to_string();
    match (request.method(), url.as_str()) {
        (tiny_http::Method::Get, "/healthz") => {
            tiny_http::Response::from_string("ok").with_status_code(200)
        }
        (tiny_http::Method::Post, "/score") => {
            let mut body = String::new();
            if let Err(e) = request.as_reader().read_to_string(&mut body) {
                return json_response(400, format!("{{\"error\": \"read: {e}\"}}"));
            }
            let parsed: ScoreRequest = match serde_json::from_str(&body) {
                Ok(p) => p,
                Err(e) => {
                    return json_response(400, format!("{{\"error\": \"parse: {e}\"}}"));
                }
            };
            match scorer.score_pairs(&parsed.pairs) {
                Ok(labels) => {
                    let response = ScoreResponse {
                        labels: labels.iter().map(|l| u8::from(l.is_entailed())).collect(),
                    };
                    json_response(200, serde_json::to_string(&response).expect("serializable"))
                }
                Err(e) => json_response(500, format!("{{\"error\": \"{e}\"}}")),
            }
        }
        _ => json_response(404, "{\"error\": \"not found\"}".to_string()),
    }
}

impl ScoreServer {
    /// Bind `bind_addr` (e.g. `127.0.0.1:0` for an ephemeral port) and serve
    /// `scorer` on a background thread.
    pub fn start(scorer: Arc<dyn EntailmentScorer>, bind_addr: &str) -> Result<ScoreServer> {
        let server = Arc::new(tiny_http::Server::http(bind_addr).map_err(|e| {
            CoreError::Protocol(format!("cannot bind scoring server on {bind_addr}: {e}"))
        })?);
        let addr = match server.server_addr() {
            tiny_http::ListenAddr::IP(a) => a,
            #[allow(unreachable_patterns)]
            _ => return Err(CoreError::Protocol("non-IP listener".into())),
        };
        let loop_server = Arc::clone(&server);
        let handle = std::thread::spawn(move || {
            for mut request in loop_server.incoming_requests() {
                let response = handle_request(&mut request, scorer.as_ref());
                let _ = request.respond(response);
            }
        });
        Ok(ScoreServer { addr, server, handle: Some(handle) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn endpoint(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Serve until the process is interrupted (used by the CLI).
    pub fn join_forever(mut self) {
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

impl Drop for ScoreServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}
