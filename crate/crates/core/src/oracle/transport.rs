//! Chat-completion transports: live HTTP, transcript recording, and transcript replay.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::OracleError;

pub const API_BASE_ENV: &str = "GENZ_API_BASE";
pub const API_KEY_ENV: &str = "GENZ_API_KEY";

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub model: String,
    pub prompt: String,
    pub temperature: f64,
}

impl ChatRequest {
    pub fn hash(&self) -> String {
        request_hash(&self.model, &self.prompt)
    }
}

/// Stable key for a (model, prompt) pair: hex SHA-256 of `model`, a newline, and `prompt`.
pub fn request_hash(model: &str, prompt: &str) -> String {
    let mut h = Sha256::new();
    h.update(model.as_bytes());
    h.update(b"\n");
    h.update(prompt.as_bytes());
    hex::encode(h.finalize())
}

pub trait ChatTransport: Send + Sync {
    /// Returns the assistant message text for a single-turn user prompt.
    fn complete(&self, request: &ChatRequest) -> Result<String, OracleError>;
}

impl<T: ChatTransport + ?Sized> ChatTransport for Box<T> {
    fn complete(&self, request: &ChatRequest) -> Result<String, OracleError> {
        (**self).complete(request)
    }
}

/// OpenAI-style `POST {base}/chat/completions` client.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
    base_url: String,
    api_key: Option<String>,
}

impl HttpTransport {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Result<Self, OracleError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| OracleError::Transport(e.to_string()))?;
        Ok(Self {
            client,
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
        })
    }

    /// Base URL from `GENZ_API_BASE`, key from `GENZ_API_KEY` (optional).
    pub fn from_env(timeout: Duration) -> Result<Self, OracleError> {
        let base = std::env::var(API_BASE_ENV).map_err(|_| {
            OracleError::InvalidRequest(format!("{API_BASE_ENV} is not set"))
        })?;
        Self::new(base, std::env::var(API_KEY_ENV).ok(), timeout)
    }
}

impl ChatTransport for HttpTransport {
    fn complete(&self, request: &ChatRequest) -> Result<String, OracleError> {
        let body = json!({
            "model": request.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
        });
        let mut builder = self
            .client
            .post(format!("{}/chat/completions", self.base_url))
            .json(&body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().map_err(|e| {
            if e.is_timeout() {
                OracleError::Timeout
            } else {
                OracleError::Transport(e.to_string())
            }
        })?;
        let status = response.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(OracleError::Transport(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(OracleError::InvalidRequest(format!("HTTP {status}")));
        }
        let value: serde_json::Value = response.json().map_err(|e| {
            if e.is_timeout() {
                OracleError::Timeout
            } else {
                OracleError::Malformed(format!("response body: {e}"))
            }
        })?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| OracleError::Malformed("missing choices[0].message.content".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub hash: String,
    pub model: String,
    pub prompt: String,
    pub response: String,
}

/// Append-only JSON-lines transcript, flushed after every entry.
pub struct TranscriptWriter {
    out: Mutex<BufWriter<File>>,
}

impl TranscriptWriter {
    pub fn append_to(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            out: Mutex::new(BufWriter::new(file)),
        })
    }

    pub fn write(&self, entry: &TranscriptEntry) -> std::io::Result<()> {
        let line = serde_json::to_string(entry).map_err(std::io::Error::other)?;
        let mut out = self.out.lock().expect("transcript lock poisoned");
        writeln!(out, "{line}")?;
        out.flush()
    }
}

/// Wraps another transport and logs every successful exchange.
pub struct RecordingTransport<T> {
    inner: T,
    writer: TranscriptWriter,
}

impl<T: ChatTransport> RecordingTransport<T> {
    pub fn new(inner: T, writer: TranscriptWriter) -> Self {
        Self { inner, writer }
    }
}

impl<T: ChatTransport> ChatTransport for RecordingTransport<T> {
    fn complete(&self, request: &ChatRequest) -> Result<String, OracleError> {
        let response = self.inner.complete(request)?;
        self.writer
            .write(&TranscriptEntry {
                hash: request.hash(),
                model: request.model.clone(),
                prompt: request.prompt.clone(),
                response: response.clone(),
            })
            .map_err(|e| OracleError::Transport(format!("transcript write: {e}")))?;
        Ok(response)
    }
}

/// Serves responses from a transcript; the first entry for a hash wins.
#[derive(Debug, Clone, Default)]
pub struct ReplayTransport {
    responses: HashMap<String, String>,
}

impl ReplayTransport {
    pub fn from_entries(entries: impl IntoIterator<Item = TranscriptEntry>) -> Self {
        let mut responses = HashMap::new();
        for e in entries {
            responses.entry(e.hash).or_insert(e.response);
        }
        Self { responses }
    }

    pub fn load(path: &Path) -> crate::Result<Self> {
        let file = File::open(path)?;
        let mut entries = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: TranscriptEntry = serde_json::from_str(&line).map_err(|e| {
                crate::Error::parse(path.display().to_string(), format!("line {}", n + 1), e)
            })?;
            entries.push(entry);
        }
        Ok(Self::from_entries(entries))
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl ChatTransport for ReplayTransport {
    fn complete(&self, request: &ChatRequest) -> Result<String, OracleError> {
        let hash = request.hash();
        self.responses
            .get(&hash)
            .cloned()
            .ok_or(OracleError::ReplayMiss(hash))
    }
}
