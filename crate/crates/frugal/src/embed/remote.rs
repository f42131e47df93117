//! HTTP client for external encoder services.
//!
//! Protocol: `POST endpoint` with body `{"ids": [..]}`, response
//! `{"rows": [[..], ..]}` with one row of `dim` floats per input id.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{EmbeddingMatrix, TokenSequence};

use super::EmbeddingProvider;

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub dim: usize,
    /// Retries after the first attempt for transient (network) failures.
    pub max_retries: usize,
    /// Initial backoff; doubles after every failed attempt.
    pub backoff: Duration,
    /// Concurrent in-flight requests allowed in `embed_batch`.
    pub concurrency: usize,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            dim: 0,
            max_retries: 2,
            backoff: Duration::from_millis(50),
            concurrency: 4,
        }
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    ids: &'a [u32],
}

#[derive(Deserialize)]
struct EmbedResponse {
    rows: Vec<Vec<f64>>,
}

pub struct RemoteProvider {
    name: String,
    cfg: RemoteConfig,
    agent: ureq::Agent,
}

impl RemoteProvider {
    pub fn new(cfg: RemoteConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(30)))
            .http_status_as_error(true)
            .build()
            .new_agent();
        Self {
            name: format!("remote:{}", cfg.endpoint),
            cfg,
            agent,
        }
    }

    fn request_once(&self, ids: &[u32]) -> std::result::Result<EmbedResponse, ureq::Error> {
        let mut response = self
            .agent
            .post(&self.cfg.endpoint)
            .send_json(EmbedRequest { ids })?;
        response.body_mut().read_json::<EmbedResponse>()
    }

    fn request_with_retries(&self, ids: &[u32]) -> Result<EmbedResponse> {
        let mut backoff = self.cfg.backoff;
        let mut last_error = None;
        for attempt in 0..=self.cfg.max_retries {
            match self.request_once(ids) {
                Ok(resp) => return Ok(resp),
                Err(e) => {
                    last_error = Some(e);
                    if attempt < self.cfg.max_retries {
                        std::thread::sleep(backoff);
                        backoff *= 2;
                    }
                }
            }
        }
        Err(Error::Remote(format!(
            "{} failed after {} attempts: {}",
            self.cfg.endpoint,
            self.cfg.max_retries + 1,
            last_error.map(|e| e.to_string()).unwrap_or_default()
        )))
    }

    fn validate(&self, seq_len: usize, resp: EmbedResponse) -> Result<EmbeddingMatrix> {
        if resp.rows.len() != seq_len {
            return Err(Error::Protocol(format!(
                "expected {seq_len} rows, got {}",
                resp.rows.len()
            )));
        }
        let mut data = Vec::with_capacity(seq_len * self.cfg.dim);
        for (i, row) in resp.rows.iter().enumerate() {
            if row.len() != self.cfg.dim {
                return Err(Error::Protocol(format!(
                    "row {i} has {} values, expected {}",
                    row.len(),
                    self.cfg.dim
                )));
            }
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(norm > 1e-12) || !norm.is_finite() {
                return Err(Error::Protocol(format!("row {i} cannot be normalized")));
            }
            data.extend(row.iter().map(|x| x / norm));
        }
        EmbeddingMatrix::from_flat(data, seq_len, self.cfg.dim, true)
    }

    /// Embed many sequences with at most `cfg.concurrency` requests in
    /// flight; outputs come back in input order.
    pub fn embed_batch(&self, seqs: &[TokenSequence]) -> Result<Vec<EmbeddingMatrix>> {
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<Option<Result<EmbeddingMatrix>>>> =
            Mutex::new((0..seqs.len()).map(|_| None).collect());
        let workers = self.cfg.concurrency.max(1).min(seqs.len().max(1));
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= seqs.len() {
                        break;
                    }
                    let out = self.embed(&seqs[i]);
                    results.lock().unwrap()[i] = Some(out);
                });
            }
        });
        results
            .into_inner()
            .unwrap()
            .into_iter()
            .map(|slot| slot.expect("worker filled every slot"))
            .collect()
    }
}

impl EmbeddingProvider for RemoteProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.cfg.dim
    }

    fn contextual(&self) -> bool {
        true
    }

    fn embed(&self, seq: &TokenSequence) -> Result<EmbeddingMatrix> {
        let resp = self.request_with_retries(&seq.ids)?;
        self.validate(seq.len(), resp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    /// Minimal one-shot HTTP mock: answers `count` requests with the body
    /// produced by `reply(ids)`.
    fn spawn_mock(
        count: usize,
        reply: impl Fn(Vec<u32>) -> String + Send + 'static,
    ) -> (String, std::thread::JoinHandle<()>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            for _ in 0..count {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream);
                let mut content_length = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let line = line.trim();
                    if line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        content_length = v.trim().parse().unwrap();
                    }
                }
                let mut body = vec![0u8; content_length];
                reader.read_exact(&mut body).unwrap();
                let req: serde_json::Value = serde_json::from_slice(&body).unwrap();
                let ids: Vec<u32> = req["ids"]
                    .as_array()
                    .unwrap()
                    .iter()
                    .map(|v| v.as_u64().unwrap() as u32)
                    .collect();
                let payload = reply(ids);
                let response = format!(
                    "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
                    payload.len(),
                    payload
                );
                let mut stream = reader.into_inner();
                stream.write_all(response.as_bytes()).unwrap();
            }
        });
        (format!("http://{addr}/embed"), handle)
    }

    fn seq(ids: &[u32]) -> TokenSequence {
        TokenSequence::new(ids.iter().map(|i| format!("t{i}")).collect(), ids.to_vec())
    }

    fn cfg(endpoint: String, dim: usize) -> RemoteConfig {
        RemoteConfig {
            endpoint,
            dim,
            max_retries: 1,
            backoff: Duration::from_millis(5),
            concurrency: 2,
        }
    }

    #[test]
    fn round_trip_through_mock() {
        let (endpoint, handle) = spawn_mock(1, |ids| {
            let rows: Vec<Vec<f64>> = ids
                .iter()
                .map(|&id| vec![1.0 + id as f64, 0.0, 0.0])
                .collect();
            serde_json::to_string(&serde_json::json!({ "rows": rows })).unwrap()
        });
        let provider = RemoteProvider::new(cfg(endpoint, 3));
        let m = provider.embed(&seq(&[4, 2])).unwrap();
        handle.join().unwrap();
        assert_eq!(m.rows(), 2);
        // Rows are normalized on receipt.
        assert!((m.row(0)[0] - 1.0).abs() < 1e-12);
        assert_eq!(m.row(0)[1], 0.0);
    }

    #[test]
    fn short_row_count_is_protocol_error() {
        let (endpoint, handle) = spawn_mock(1, |ids| {
            let rows: Vec<Vec<f64>> = ids[..ids.len() - 1]
                .iter()
                .map(|_| vec![1.0, 0.0])
                .collect();
            serde_json::to_string(&serde_json::json!({ "rows": rows })).unwrap()
        });
        let provider = RemoteProvider::new(cfg(endpoint, 2));
        let err = provider.embed(&seq(&[1, 2, 3])).unwrap_err();
        handle.join().unwrap();
        assert_eq!(err.kind(), "ProtocolError");
    }

    #[test]
    fn unreachable_server_is_remote_error_after_retries() {
        // Bind then drop, so the port is very likely closed.
        let addr = {
            let l = TcpListener::bind("127.0.0.1:0").unwrap();
            l.local_addr().unwrap()
        };
        let provider = RemoteProvider::new(cfg(format!("http://{addr}/embed"), 2));
        let start = std::time::Instant::now();
        let err = provider.embed(&seq(&[1])).unwrap_err();
        assert_eq!(err.kind(), "RemoteError");
        // One retry with 5ms initial backoff must have slept at least once.
        assert!(start.elapsed() >= Duration::from_millis(5));
    }

    #[test]
    fn batch_preserves_order() {
        let (endpoint, handle) = spawn_mock(4, |ids| {
            let rows: Vec<Vec<f64>> = ids.iter().map(|&id| vec![id as f64 + 1.0, 1.0]).collect();
            serde_json::to_string(&serde_json::json!({ "rows": rows })).unwrap()
        });
        let provider = RemoteProvider::new(cfg(endpoint, 2));
        let seqs: Vec<TokenSequence> = (0..4).map(|i| seq(&[i])).collect();
        let out = provider.embed_batch(&seqs).unwrap();
        handle.join().unwrap();
        assert_eq!(out.len(), 4);
        for (i, m) in out.iter().enumerate() {
            let expected = (i as f64 + 1.0) / ((i as f64 + 1.0).powi(2) + 1.0).sqrt();
            assert!((m.row(0)[0] - expected).abs() < 1e-12, "slot {i}");
        }
    }
}
