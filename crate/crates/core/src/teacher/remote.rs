//! HTTP teacher client with retries and a digest-keyed disk cache.
//!
//! Embedding request: `POST {endpoint}` with `{"texts": [..]}`, response
//! `{"embeddings": [[..], ..]}` in request order. Completion request (used by
//! report generation): `{"prompt": ".."}`, response `{"text": ".."}`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::{normalize_in_place, text_digest, EmbeddingSource, TeacherEmbedding, TeacherError, TextEmbedder};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("network: {0}")]
    Network(String),
    #[error("HTTP status {0}: {1}")]
    Status(u16, String),
    #[error("undecodable body: {0}")]
    Decode(String),
}

/// Sends one JSON request and returns the parsed JSON response.
pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, body: &Value, timeout: Duration) -> Result<Value, TransportError>;
}

/// Blocking HTTP transport.
#[derive(Clone, Copy, Debug, Default)]
pub struct HttpTransport;

impl Transport for HttpTransport {
    fn post_json(&self, url: &str, body: &Value, timeout: Duration) -> Result<Value, TransportError> {
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        match agent.post(url).send_json(body.clone()) {
            Ok(resp) => resp.into_json::<Value>().map_err(|e| TransportError::Decode(e.to_string())),
            Err(ureq::Error::Status(code, resp)) => {
                Err(TransportError::Status(code, resp.into_string().unwrap_or_default()))
            }
            Err(e) => Err(TransportError::Network(e.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_retries: u32,
    /// Delay before the first retry; doubles on each further attempt.
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            backoff_ms: 200,
        }
    }
}

impl RetryPolicy {
    /// Runs `f` until it succeeds, `retriable` rejects the error, or retries run out.
    pub fn run<T, E: std::fmt::Display>(
        &self,
        mut f: impl FnMut(u32) -> Result<T, E>,
        retriable: impl Fn(&E) -> bool,
    ) -> Result<T, E> {
        let mut attempt = 0;
        loop {
            match f(attempt) {
                Ok(v) => return Ok(v),
                Err(e) if attempt < self.max_retries && retriable(&e) => {
                    let wait = self.backoff_ms.saturating_mul(1 << attempt.min(16));
                    log::warn!("attempt {} failed ({e}); retrying in {wait} ms", attempt + 1);
                    if wait > 0 {
                        std::thread::sleep(Duration::from_millis(wait));
                    }
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub dim: usize,
    pub max_batch: usize,
    pub timeout_ms: u64,
    pub retry: RetryPolicy,
    pub cache_dir: Option<PathBuf>,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8080/embed".into(),
            dim: super::DEFAULT_TEACHER_DIM,
            max_batch: 64,
            timeout_ms: 30_000,
            retry: RetryPolicy::default(),
            cache_dir: None,
        }
    }
}

pub struct RemoteClient {
    cfg: RemoteConfig,
    transport: Box<dyn Transport>,
    requests: AtomicUsize,
}

fn retriable(e: &TeacherError) -> bool {
    matches!(
        e,
        TeacherError::Transport(_) | TeacherError::Protocol(_) | TeacherError::Dimension { .. }
    )
}

impl RemoteClient {
    pub fn new(cfg: RemoteConfig, transport: Box<dyn Transport>) -> Self {
        Self {
            cfg,
            transport,
            requests: AtomicUsize::new(0),
        }
    }

    pub fn http(cfg: RemoteConfig) -> Self {
        Self::new(cfg, Box::new(HttpTransport))
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.cfg
    }

    /// Number of requests sent so far (retries included).
    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::Relaxed)
    }

    fn post(&self, body: &Value) -> Result<Value, TeacherError> {
        self.requests.fetch_add(1, Ordering::Relaxed);
        self.transport
            .post_json(&self.cfg.endpoint, body, Duration::from_millis(self.cfg.timeout_ms))
            .map_err(|e| TeacherError::Transport(e.to_string()))
    }

    fn cache_path(&self, digest: &str) -> Option<PathBuf> {
        self.cfg.cache_dir.as_ref().map(|d| d.join(format!("{digest}.f64")))
    }

    fn read_cache(&self, digest: &str) -> Option<Vec<f64>> {
        let bytes = fs::read(self.cache_path(digest)?).ok()?;
        if bytes.len() != self.cfg.dim * 8 {
            log::warn!("ignoring cache entry {digest} with {} bytes", bytes.len());
            return None;
        }
        Some(
            bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        )
    }

    fn write_cache(&self, digest: &str, v: &[f64]) -> Result<(), TeacherError> {
        if let Some(path) = self.cache_path(digest) {
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir)?;
            }
            let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
            let tmp = path.with_extension("tmp");
            fs::write(&tmp, bytes)?;
            fs::rename(tmp, path)?;
        }
        Ok(())
    }

    fn request_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, TeacherError> {
        let resp = self.post(&json!({ "texts": texts }))?;
        let rows = resp
            .get("embeddings")
            .and_then(Value::as_array)
            .ok_or_else(|| TeacherError::Protocol("response lacks an \"embeddings\" array".into()))?;
        if rows.len() != texts.len() {
            return Err(TeacherError::Protocol(format!(
                "asked for {} embeddings, received {}",
                texts.len(),
                rows.len()
            )));
        }
        rows.iter()
            .map(|row| {
                let row = row
                    .as_array()
                    .ok_or_else(|| TeacherError::Protocol("embedding is not an array".into()))?;
                if row.len() != self.cfg.dim {
                    return Err(TeacherError::Dimension {
                        expected: self.cfg.dim,
                        got: row.len(),
                    });
                }
                let mut v = row
                    .iter()
                    .map(|x| {
                        x.as_f64()
                            .filter(|f| f.is_finite())
                            .ok_or_else(|| TeacherError::Protocol("non-numeric embedding entry".into()))
                    })
                    .collect::<Result<Vec<f64>, _>>()?;
                if normalize_in_place(&mut v) == 0.0 {
                    return Err(TeacherError::Protocol("zero embedding".into()));
                }
                Ok(v)
            })
            .collect()
    }

    /// One unit vector per text, in order; cached texts cause no request.
    pub fn fetch_remote(&self, texts: &[String]) -> Result<Vec<TeacherEmbedding>, TeacherError> {
        if texts.len() > self.cfg.max_batch {
            return Err(TeacherError::InvalidArgument(format!(
                "batch of {} exceeds max_batch {}",
                texts.len(),
                self.cfg.max_batch
            )));
        }
        let digests: Vec<String> = texts.iter().map(|t| text_digest(t)).collect();
        let mut found: Vec<Option<Vec<f64>>> = digests.iter().map(|d| self.read_cache(d)).collect();
        let mut pending: Vec<usize> = Vec::new();
        for (i, t) in texts.iter().enumerate() {
            if super::normalize_text(t).is_empty() {
                return Err(TeacherError::EmptyText);
            }
            if found[i].is_none() && !pending.iter().any(|&j| digests[j] == digests[i]) {
                pending.push(i);
            }
        }
        if !pending.is_empty() {
            let batch: Vec<&str> = pending.iter().map(|&i| texts[i].as_str()).collect();
            let vectors = self.cfg.retry.run(|_| self.request_batch(&batch), retriable)?;
            for (&i, v) in pending.iter().zip(vectors) {
                self.write_cache(&digests[i], &v)?;
                found[i] = Some(v);
            }
            for i in 0..texts.len() {
                if found[i].is_none() {
                    let src = pending.iter().find(|&&j| digests[j] == digests[i]).copied();
                    found[i] = src.and_then(|j| found[j].clone());
                }
            }
        }
        Ok(found
            .into_iter()
            .zip(digests)
            .map(|(v, d)| TeacherEmbedding {
                vector: v.expect("every text resolved"),
                source: EmbeddingSource::Remote,
                text_digest: d,
            })
            .collect())
    }

    /// Text completion against the same endpoint machinery.
    pub fn complete(&self, prompt: &str) -> Result<String, TeacherError> {
        self.cfg.retry.run(
            |_| {
                let resp = self.post(&json!({ "prompt": prompt }))?;
                resp.get("text")
                    .and_then(Value::as_str)
                    .map(str::to_string)
                    .ok_or_else(|| TeacherError::Protocol("response lacks a \"text\" string".into()))
            },
            |e| matches!(e, TeacherError::Transport(_)),
        )
    }

    pub fn cache_dir(&self) -> Option<&Path> {
        self.cfg.cache_dir.as_deref()
    }
}

impl TextEmbedder for RemoteClient {
    fn dim(&self) -> usize {
        self.cfg.dim
    }

    fn embed(&self, text: &str) -> Result<TeacherEmbedding, TeacherError> {
        Ok(self.fetch_remote(&[text.to_string()])?.remove(0))
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<TeacherEmbedding>, TeacherError> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.cfg.max_batch.max(1)) {
            out.extend(self.fetch_remote(chunk)?);
        }
        Ok(out)
    }
}
